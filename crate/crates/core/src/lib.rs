//! Evidence front-end for localizing and explaining robot manipulation failures.
//!
//! The pipeline picks motion-salient keyframes from a video, runs detection and
//! relative depth on them, derives gripper/object contact transitions and a
//! spatial scene graph, renders bird's-eye-view sketches, and serializes the
//! lot into a compact tagged context plus an image bundle for a vision-language
//! model.
//!
//! Numeric kernels are generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the pipeline uses.

pub mod bev;
pub mod contact;
pub mod evidence;
pub mod fixtures;
pub mod geometry;
pub mod http;
pub mod ingest;
pub mod model;
pub mod perception;
pub mod pipeline;
pub mod raster;
pub mod saliency;
pub mod scalar;
pub mod scene_graph;
pub mod synth;
pub mod vlm;

pub type BBox = geometry::BBox<f64>;
pub type Plane = raster::Plane<f64>;
pub type FlowField = saliency::flow::FlowField<f64>;
pub type CameraModel = scene_graph::CameraModel<f64>;

pub type BBox32 = geometry::BBox<f32>;
pub type Plane32 = raster::Plane<f32>;
pub type FlowField32 = saliency::flow::FlowField<f32>;
