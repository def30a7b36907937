//! Per-keyframe scene graphs over approximate 3D centroids, and their
//! aggregation into one global graph keyed by track.
//!
//! Coordinates are camera-relative and unitless: X right, Y down, Z forward
//! (the normalized relative depth). Nothing here is metric.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::model::{Detection, TrackSet};
use crate::scalar::Scalar;

/// Offset added to depth before lateral scaling, so `z = 0` does not collapse.
pub const DEPTH_EPSILON: f64 = 0.1;
/// Default per-axis tolerance for asserting a relation.
pub const DEFAULT_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneGraphError {
    #[error("MISSING_DEPTH: detection {0} has no depth statistics")]
    MissingDepth(String),
    #[error("MISSING_INSTANCE: detection {0} has not been tracked")]
    MissingInstance(String),
}

impl SceneGraphError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MissingDepth(_) => "MISSING_DEPTH",
            Self::MissingInstance(_) => "MISSING_INSTANCE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct CameraModel<S> {
    pub focal_px: S,
    pub principal_point: (S, S),
}

impl<S: Scalar> Default for CameraModel<S> {
    fn default() -> Self {
        Self { focal_px: S::lit(512.0), principal_point: (S::lit(256.0), S::lit(256.0)) }
    }
}

/// Pinhole-style lift of a box centre at relative depth `z`.
pub fn backproject_centroid<S: Scalar>(bbox: &BBox<S>, z: S, cam: &CameraModel<S>) -> [S; 3] {
    let (cx, cy) = bbox.center();
    let scale = z + S::lit(DEPTH_EPSILON);
    [
        (cx - cam.principal_point.0) / cam.focal_px * scale,
        (cy - cam.principal_point.1) / cam.focal_px * scale,
        z,
    ]
}

pub fn backproject_detection(det: &Detection, cam: &CameraModel<f64>) -> Result<[f64; 3], SceneGraphError> {
    let stats = det.depth_stats.ok_or_else(|| SceneGraphError::MissingDepth(det.tag()))?;
    Ok(backproject_centroid(&det.bbox, stats.median_rel_depth, cam))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relation {
    LeftOf,
    Above,
    InFrontOf,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::LeftOf, Relation::Above, Relation::InFrontOf];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LeftOf => "left_of",
            Self::Above => "above",
            Self::InFrontOf => "in_front_of",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Relations asserted from `a` toward `b`, in `Relation::ALL` order.
pub fn pairwise_relations<S: Scalar>(a: &[S; 3], b: &[S; 3], tol: S) -> Vec<Relation> {
    Relation::ALL
        .into_iter()
        .enumerate()
        .filter(|&(axis, _)| a[axis] < b[axis] - tol)
        .map(|(_, r)| r)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub instance_id: u32,
    pub class_label: String,
    pub centroid: [f64; 3],
    /// Box center in keyframe pixels.
    pub pixel_center: [f64; 2],
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub subject: u32,
    pub relation: Relation,
    pub object: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub keyframe_ordinal: usize,
    pub nodes: Vec<SceneNode>,
    pub edges: Vec<Edge>,
}

/// Nodes for every tracked detection; edges for every relation over ordered pairs.
pub fn build_local_graph(
    keyframe_ordinal: usize,
    detections: &[Detection],
    cam: &CameraModel<f64>,
    tol: f64,
) -> Result<SceneGraph, SceneGraphError> {
    let mut nodes = detections
        .iter()
        .map(|d| {
            let instance_id = d.instance_id.ok_or_else(|| SceneGraphError::MissingInstance(d.tag()))?;
            Ok(SceneNode {
                instance_id,
                class_label: d.class_label.clone(),
                centroid: backproject_detection(d, cam)?,
                pixel_center: {
                    let (cx, cy) = d.bbox.center();
                    [cx, cy]
                },
                confidence: d.confidence,
            })
        })
        .collect::<Result<Vec<_>, SceneGraphError>>()?;
    nodes.sort_by_key(|n| n.instance_id);

    let mut edges = Vec::new();
    for a in &nodes {
        for b in &nodes {
            if a.instance_id == b.instance_id {
                continue;
            }
            for relation in pairwise_relations(&a.centroid, &b.centroid, tol) {
                edges.push(Edge { subject: a.instance_id, relation, object: b.instance_id });
            }
        }
    }
    edges.sort();
    Ok(SceneGraph { keyframe_ordinal, nodes, edges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalNode {
    pub instance_id: u32,
    pub class_label: String,
    pub keyframes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistentEdge {
    #[serde(flatten)]
    pub edge: Edge,
    /// Number of keyframes in which the relation holds.
    pub persistence: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalSceneGraph {
    pub keyframe_count: usize,
    pub nodes: Vec<GlobalNode>,
    pub per_keyframe_edges: Vec<Vec<Edge>>,
    /// Sorted by `(subject, relation, object)`; only edges seen at least once.
    pub edges: Vec<PersistentEdge>,
}

impl GlobalSceneGraph {
    pub fn class_of(&self, instance_id: u32) -> Option<&str> {
        self.nodes.iter().find(|n| n.instance_id == instance_id).map(|n| n.class_label.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

pub fn aggregate_global(local_graphs: &[SceneGraph], tracks: &TrackSet) -> GlobalSceneGraph {
    let nodes = tracks
        .tracks
        .iter()
        .map(|t| GlobalNode {
            instance_id: t.instance_id,
            class_label: t.class_label.clone(),
            keyframes: t.observations.keys().copied().collect(),
        })
        .collect();
    let mut counts: BTreeMap<Edge, usize> = BTreeMap::new();
    for g in local_graphs {
        let mut seen: Vec<Edge> = g.edges.clone();
        seen.sort();
        seen.dedup();
        for e in seen {
            *counts.entry(e).or_default() += 1;
        }
    }
    GlobalSceneGraph {
        keyframe_count: local_graphs.len(),
        nodes,
        per_keyframe_edges: local_graphs.iter().map(|g| g.edges.clone()).collect(),
        edges: counts.into_iter().map(|(edge, persistence)| PersistentEdge { edge, persistence }).collect(),
    }
}
