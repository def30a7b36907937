//! Motion saliency and keyframe selection.
//!
//! Every consecutive frame pair gets a dense flow field; its mean magnitude
//! scores the later frame of the pair. Keyframes are the NMS peaks of that
//! curve, topped up from a uniform grid when there are fewer than the budget.

pub mod flow;
pub mod select;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use flow::{farneback, mean_flow_magnitude, FarnebackParams, FlowField};
pub use crate::raster::Plane;
pub use select::{select_from_scores, select_uniform, uniform_grid, SelectedFrame};

use crate::ingest::{FrameSource, IngestError};
use crate::model::Frame;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("DIM_MISMATCH: frames are {0:?} and {1:?}")]
    DimMismatch((u32, u32), (u32, u32)),
    #[error("TOO_FEW_FRAMES: need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("EMPTY_CURVE: saliency curve has no scores")]
    EmptyCurve,
    #[error("invalid selection params: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl SaliencyError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::DimMismatch(..) => "DIM_MISMATCH",
            Self::TooFewFrames(_) => "TOO_FEW_FRAMES",
            Self::EmptyCurve => "EMPTY_CURVE",
            Self::InvalidParams(_) => "INVALID_PARAMS",
            Self::Ingest(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlowAlgorithm {
    Farneback(FarnebackParams),
}

impl Default for FlowAlgorithm {
    fn default() -> Self {
        Self::Farneback(FarnebackParams::default())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyframeMode {
    #[default]
    Motion,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeSelectionParams {
    /// Keyframe budget M.
    pub budget: usize,
    pub nms_window: usize,
    /// Long side (px) frames are reduced to before flow.
    pub downscale: usize,
    pub flow_algorithm: FlowAlgorithm,
    pub mode: KeyframeMode,
}

impl Default for KeyframeSelectionParams {
    fn default() -> Self {
        Self {
            budget: 8,
            nms_window: 5,
            downscale: 256,
            flow_algorithm: FlowAlgorithm::default(),
            mode: KeyframeMode::Motion,
        }
    }
}

impl KeyframeSelectionParams {
    pub fn validate(&self) -> Result<(), SaliencyError> {
        if self.budget < 1 {
            return Err(SaliencyError::InvalidParams("budget must be >= 1".into()));
        }
        if self.nms_window < 1 {
            return Err(SaliencyError::InvalidParams("nms_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean flow magnitude per frame pair; `scores[t]` scores frame `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyCurve {
    pub scores: Vec<f64>,
    pub frame_count: usize,
}

impl SaliencyCurve {
    /// CSV with header `frame_index,score`, one row per scored frame.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,score\n");
        for (t, s) in self.scores.iter().enumerate() {
            let _ = writeln!(out, "{},{:.6}", t + 1, s);
        }
        out
    }

    pub fn argmax_frame(&self) -> Option<usize> {
        self.scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(t, _)| t + 1)
    }
}

fn prepare<S: Scalar>(frame: &Frame, params: &KeyframeSelectionParams) -> Plane<S> {
    Plane::luma(&frame.pixels).downscaled(params.downscale)
}

fn flow_between<S: Scalar>(prev: &Plane<S>, next: &Plane<S>, params: &KeyframeSelectionParams) -> FlowField<S> {
    match params.flow_algorithm {
        FlowAlgorithm::Farneback(p) => farneback(prev, next, &p),
    }
}

/// Dense flow between two frames at the configured working resolution.
pub fn compute_flow<S: Scalar>(
    prev: &Frame,
    next: &Frame,
    params: &KeyframeSelectionParams,
) -> Result<FlowField<S>, SaliencyError> {
    if prev.pixels.dimensions() != next.pixels.dimensions() {
        return Err(SaliencyError::DimMismatch(prev.pixels.dimensions(), next.pixels.dimensions()));
    }
    let a = prepare::<S>(prev, params);
    let b = prepare::<S>(next, params);
    Ok(flow_between(&a, &b, params))
}

const CHUNK: usize = 64;

/// Score every frame pair of `src`. Frames are decoded and compared in
/// bounded parallel chunks so memory does not grow with episode length.
pub fn saliency_series(src: &FrameSource, params: &KeyframeSelectionParams) -> Result<SaliencyCurve, SaliencyError> {
    saliency_series_as::<f32>(src, params)
}

pub fn saliency_series_as<S: Scalar>(
    src: &FrameSource,
    params: &KeyframeSelectionParams,
) -> Result<SaliencyCurve, SaliencyError> {
    let t = src.frame_count();
    if t < 2 {
        return Err(SaliencyError::TooFewFrames(t));
    }
    let mut scores = Vec::with_capacity(t - 1);
    let mut carry: Option<Plane<S>> = None;
    let mut start = 0;
    while start < t {
        let end = (start + CHUNK).min(t);
        let planes: Vec<Plane<S>> = (start..end)
            .into_par_iter()
            .map(|i| src.read_frame(i as i64).map(|f| prepare::<S>(&f, params)))
            .collect::<Result<_, _>>()?;
        let mut window: Vec<&Plane<S>> = Vec::with_capacity(planes.len() + 1);
        if let Some(c) = carry.as_ref() {
            window.push(c);
        }
        window.extend(planes.iter());
        let chunk_scores: Vec<f64> = window
            .par_windows(2)
            .map(|w| mean_flow_magnitude(&flow_between(w[0], w[1], params)).as_f64())
            .collect();
        scores.extend(chunk_scores);
        carry = planes.into_iter().last();
        start = end;
    }
    Ok(SaliencyCurve { scores, frame_count: t })
}

/// Pick keyframes from the curve according to `params.mode`.
pub fn select_keyframes(curve: &SaliencyCurve, params: &KeyframeSelectionParams) -> Result<Vec<SelectedFrame>, SaliencyError> {
    params.validate()?;
    if curve.scores.is_empty() {
        return Err(SaliencyError::EmptyCurve);
    }
    Ok(match params.mode {
        KeyframeMode::Motion => select_from_scores(&curve.scores, curve.frame_count, params.budget, params.nms_window),
        KeyframeMode::Uniform => select_uniform(curve.frame_count, params.budget),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn textured(w: u32, h: u32, shift: f64, brightness: f64) -> Frame {
        let img = RgbImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64 - shift, y as f64);
            let v = 110.0
                + 35.0 * (0.19 * x + 0.07 * y).sin()
                + 30.0 * (0.06 * x - 0.15 * y + 0.8).cos()
                + 20.0 * (0.11 * x + 0.13 * y + 2.0).sin()
                + brightness;
            let c = v.round().clamp(0.0, 255.0) as u8;
            Rgb([c, c, c])
        });
        Frame { index: 0, timestamp: 0.0, pixels: img }
    }

    #[test]
    fn identical_frames() {
        let a = textured(160, 120, 0.0, 0.0);
        let f = compute_flow::<f64>(&a, &a, &KeyframeSelectionParams::default()).unwrap();
        assert!(mean_flow_magnitude(&f) < 0.05);
    }

    #[test]
    fn synthetic_translation() {
        let a = textured(160, 120, 0.0, 0.0);
        let b = textured(160, 120, 3.0, 0.0);
        let f = compute_flow::<f32>(&a, &b, &KeyframeSelectionParams::default()).unwrap();
        assert!((f.mean_u() - 3.0).abs() < 0.5, "mean u = {}", f.mean_u());
        assert!(f.mean_v().abs() < 0.5);
    }

    #[test]
    fn global_brightness_change() {
        let a = textured(160, 120, 0.0, 0.0);
        let b = textured(160, 120, 0.0, 25.0);
        let f = compute_flow::<f64>(&a, &b, &KeyframeSelectionParams::default()).unwrap();
        assert!(mean_flow_magnitude(&f) < 0.5, "{}", mean_flow_magnitude(&f));
    }

    #[test]
    fn dimension_mismatch() {
        let a = textured(160, 120, 0.0, 0.0);
        let b = textured(120, 120, 0.0, 0.0);
        let err = compute_flow::<f32>(&a, &b, &KeyframeSelectionParams::default()).unwrap_err();
        assert_eq!(err.code(), "DIM_MISMATCH");
    }

    #[test]
    fn csv_export() {
        let c = SaliencyCurve { scores: vec![0.0, 1.5], frame_count: 3 };
        assert_eq!(c.to_csv(), "frame_index,score\n1,0.000000\n2,1.500000\n");
    }

    #[test]
    fn empty_curve() {
        let c = SaliencyCurve { scores: vec![], frame_count: 1 };
        assert_eq!(select_keyframes(&c, &KeyframeSelectionParams::default()).unwrap_err().code(), "EMPTY_CURVE");
    }
}
