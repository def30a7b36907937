//! Domain types shared by every pipeline stage, plus bundle validation.

use std::collections::BTreeSet;
use std::fmt;

use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, KEYFRAME_SIZE};
use crate::scene_graph::{GlobalSceneGraph, SceneGraph};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid video metadata: {0}")]
    InvalidMeta(String),
    #[error("invalid robot profile: {0}")]
    InvalidProfile(String),
}

/// Episode-level video metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub source_id: String,
}

impl VideoMeta {
    pub fn new(
        frame_count: usize,
        width: u32,
        height: u32,
        fps: f64,
        source_id: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let meta = Self { frame_count, width, height, fps, source_id: source_id.into() };
        meta.check().map_err(ModelError::InvalidMeta)?;
        Ok(meta)
    }

    fn check(&self) -> Result<(), String> {
        if self.frame_count < 1 {
            return Err("frame_count must be >= 1".into());
        }
        if self.width < 16 || self.height < 16 {
            return Err(format!("frames must be at least 16x16, got {}x{}", self.width, self.height));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(format!("fps must be > 0, got {}", self.fps));
        }
        Ok(())
    }
}

/// One decoded frame of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub timestamp: f64,
    pub pixels: RgbImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SelectionReason {
    MotionPeak,
    UniformBackfill,
}

impl fmt::Display for SelectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MotionPeak => "MOTION_PEAK",
            Self::UniformBackfill => "UNIFORM_BACKFILL",
        })
    }
}

fn empty_image() -> RgbImage {
    RgbImage::new(0, 0)
}

/// A selected frame, resized to the square keyframe raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame_index: usize,
    pub timestamp: f64,
    #[serde(skip, default = "empty_image")]
    pub image: RgbImage,
    pub selection_reason: SelectionReason,
}

impl Keyframe {
    pub fn from_frame(frame: &Frame, selection_reason: SelectionReason) -> Self {
        let image = if frame.pixels.dimensions() == (KEYFRAME_SIZE, KEYFRAME_SIZE) {
            frame.pixels.clone()
        } else {
            imageops::resize(
                &frame.pixels,
                KEYFRAME_SIZE,
                KEYFRAME_SIZE,
                imageops::FilterType::Triangle,
            )
        };
        Self { frame_index: frame.index, timestamp: frame.timestamp, image, selection_reason }
    }
}

/// Per-detection summary of the normalized depth raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub median_rel_depth: f64,
    pub mean_rel_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox<f64>,
    pub class_label: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_stats: Option<DepthStats>,
}

impl Detection {
    pub fn new(bbox: BBox<f64>, class_label: impl Into<String>, confidence: f64) -> Self {
        Self { bbox, class_label: class_label.into(), confidence, instance_id: None, depth_stats: None }
    }

    /// `<class>#<id>`, with `?` standing in for an unassigned id.
    pub fn tag(&self) -> String {
        match self.instance_id {
            Some(id) => format!("{}#{}", self.class_label, id),
            None => format!("{}#?", self.class_label),
        }
    }
}

pub type DetectionSet = Vec<Detection>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContactLabel {
    Gain,
    Loss,
    Stable,
}

impl ContactLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Gain => "GAIN",
            Self::Loss => "LOSS",
            Self::Stable => "STABLE",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "GAIN" => Some(Self::Gain),
            "LOSS" => Some(Self::Loss),
            "STABLE" => Some(Self::Stable),
            _ => None,
        }
    }
}

impl fmt::Display for ContactLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a transition fell back to `STABLE` without being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContactFlag {
    LowConfidence,
    NoPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactTransition {
    pub from_keyframe: usize,
    pub to_keyframe: usize,
    pub label: ContactLabel,
    pub delta_iou: f64,
    pub delta_dist: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<ContactFlag>,
}

impl ContactTransition {
    pub fn fallback(from_keyframe: usize, flag: ContactFlag) -> Self {
        Self {
            from_keyframe,
            to_keyframe: from_keyframe + 1,
            label: ContactLabel::Stable,
            delta_iou: 0.0,
            delta_dist: 0.0,
            flag: Some(flag),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotProfile {
    pub name: String,
    pub num_arms: u32,
    pub num_grippers: u32,
    #[serde(default)]
    pub end_effector_types: Vec<String>,
    #[serde(default)]
    pub sensors: Vec<String>,
    #[serde(default)]
    pub workspace_note: String,
    #[serde(default)]
    pub constraints_note: String,
    #[serde(default)]
    pub gripper_class_labels: Vec<String>,
}

impl RobotProfile {
    pub fn validate(&self, contact_enabled: bool) -> Result<(), ModelError> {
        if self.num_arms < 1 {
            return Err(ModelError::InvalidProfile("num_arms must be >= 1".into()));
        }
        if contact_enabled && self.gripper_class_labels.is_empty() {
            return Err(ModelError::InvalidProfile(
                "gripper_class_labels must be non-empty when contact analysis is enabled".into(),
            ));
        }
        Ok(())
    }

    pub fn is_gripper(&self, class_label: &str) -> bool {
        self.gripper_class_labels.iter().any(|g| g == class_label)
    }
}

/// Cross-keyframe identity of one detected instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub instance_id: u32,
    pub class_label: String,
    /// Keyframe ordinal to index into that keyframe's detection set.
    pub observations: std::collections::BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
}

impl TrackSet {
    pub fn get(&self, instance_id: u32) -> Option<&Track> {
        self.tracks.iter().find(|t| t.instance_id == instance_id)
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        self.tracks.iter().map(|t| t.instance_id).collect()
    }
}

/// Everything gathered for one episode, ready to be serialized into a context.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeEvidence {
    pub meta: VideoMeta,
    pub robot: RobotProfile,
    pub plan_steps: Option<Vec<String>>,
    /// Keyframe budget the bundle was built under.
    pub budget: usize,
    pub keyframes: Vec<Keyframe>,
    pub detections: Vec<DetectionSet>,
    pub tracks: TrackSet,
    pub contacts: Vec<ContactTransition>,
    pub local_graphs: Vec<SceneGraph>,
    pub global_graph: GlobalSceneGraph,
    /// False for the ablation that drops schematic images; `bev_images` is then empty.
    pub bev_enabled: bool,
    pub bev_images: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationCode {
    MetaInvalid,
    RobotInvalid,
    BudgetExceeded,
    DetectionCountMismatch,
    GraphCountMismatch,
    BevCountMismatch,
    ContactCountMismatch,
    ContactOrder,
    KeyframeOrder,
    KeyframeSize,
    TimestampOrder,
    ConfidenceRange,
    BoxRange,
    DepthRange,
    UnknownInstance,
    GraphEdgeInvalid,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MetaInvalid => "META_INVALID",
            Self::RobotInvalid => "ROBOT_INVALID",
            Self::BudgetExceeded => "BUDGET_EXCEEDED",
            Self::DetectionCountMismatch => "DETECTION_COUNT_MISMATCH",
            Self::GraphCountMismatch => "GRAPH_COUNT_MISMATCH",
            Self::BevCountMismatch => "BEV_COUNT_MISMATCH",
            Self::ContactCountMismatch => "CONTACT_COUNT_MISMATCH",
            Self::ContactOrder => "CONTACT_ORDER",
            Self::KeyframeOrder => "KEYFRAME_ORDER",
            Self::KeyframeSize => "KEYFRAME_SIZE",
            Self::TimestampOrder => "TIMESTAMP_ORDER",
            Self::ConfidenceRange => "CONFIDENCE_RANGE",
            Self::BoxRange => "BOX_RANGE",
            Self::DepthRange => "DEPTH_RANGE",
            Self::UnknownInstance => "UNKNOWN_INSTANCE",
            Self::GraphEdgeInvalid => "GRAPH_EDGE_INVALID",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
}

/// Collect every invariant the bundle breaks. An empty list means valid.
pub fn validate_evidence(e: &EpisodeEvidence) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, detail: String| out.push(Violation { code, detail });

    if let Err(msg) = e.meta.check() {
        push(ViolationCode::MetaInvalid, msg);
    }
    if let Err(err) = e.robot.validate(false) {
        push(ViolationCode::RobotInvalid, err.to_string());
    }

    let n = e.keyframes.len();
    if n > e.budget {
        push(ViolationCode::BudgetExceeded, format!("{n} keyframes over budget {}", e.budget));
    }
    if e.detections.len() != n {
        push(
            ViolationCode::DetectionCountMismatch,
            format!("{} detection sets for {n} keyframes", e.detections.len()),
        );
    }
    if e.local_graphs.len() != n {
        push(
            ViolationCode::GraphCountMismatch,
            format!("{} local graphs for {n} keyframes", e.local_graphs.len()),
        );
    }
    let expected_bev = if e.bev_enabled { n } else { 0 };
    if e.bev_images.len() != expected_bev {
        push(
            ViolationCode::BevCountMismatch,
            format!("{} bev images, expected {expected_bev}", e.bev_images.len()),
        );
    }
    let expected_contacts = n.saturating_sub(1);
    if e.contacts.len() != expected_contacts {
        push(
            ViolationCode::ContactCountMismatch,
            format!("{} contacts for {n} keyframes", e.contacts.len()),
        );
    }
    for (k, c) in e.contacts.iter().enumerate() {
        if c.from_keyframe != k || c.to_keyframe != k + 1 {
            push(
                ViolationCode::ContactOrder,
                format!("contact {k} spans {}->{}", c.from_keyframe, c.to_keyframe),
            );
        }
    }

    for (k, pair) in e.keyframes.windows(2).enumerate() {
        if pair[0].frame_index >= pair[1].frame_index {
            push(
                ViolationCode::KeyframeOrder,
                format!("keyframe {} index {} not after {}", k + 1, pair[1].frame_index, pair[0].frame_index),
            );
        }
        if pair[0].timestamp >= pair[1].timestamp {
            push(ViolationCode::TimestampOrder, format!("keyframe {} timestamp not increasing", k + 1));
        }
    }
    for (k, kf) in e.keyframes.iter().enumerate() {
        if kf.image.dimensions() != (KEYFRAME_SIZE, KEYFRAME_SIZE) {
            let (w, h) = kf.image.dimensions();
            push(ViolationCode::KeyframeSize, format!("keyframe {k} is {w}x{h}"));
        }
        if !(kf.timestamp.is_finite() && kf.timestamp >= 0.0) {
            push(ViolationCode::TimestampOrder, format!("keyframe {k} timestamp {}", kf.timestamp));
        }
    }

    let limit = KEYFRAME_SIZE as f64;
    let track_ids = e.tracks.ids();
    for (k, set) in e.detections.iter().enumerate() {
        for (j, d) in set.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.confidence) {
                push(
                    ViolationCode::ConfidenceRange,
                    format!("keyframe {k} detection {j} confidence {}", d.confidence),
                );
            }
            if !(d.bbox.is_proper() && d.bbox.within(limit)) {
                push(ViolationCode::BoxRange, format!("keyframe {k} detection {j} box {:?}", d.bbox));
            }
            if let Some(ds) = d.depth_stats {
                let ok = |v: f64| (0.0..=1.0).contains(&v);
                if !(ok(ds.median_rel_depth) && ok(ds.mean_rel_depth)) {
                    push(ViolationCode::DepthRange, format!("keyframe {k} detection {j} depth {ds:?}"));
                }
            }
            if let Some(id) = d.instance_id {
                if !track_ids.contains(&id) {
                    push(ViolationCode::UnknownInstance, format!("keyframe {k} instance {id} has no track"));
                }
            }
        }
    }

    for g in &e.local_graphs {
        let node_ids: BTreeSet<u32> = g.nodes.iter().map(|n| n.instance_id).collect();
        for id in &node_ids {
            if !track_ids.contains(id) {
                push(
                    ViolationCode::UnknownInstance,
                    format!("graph {} node {id} has no track", g.keyframe_ordinal),
                );
            }
        }
        for edge in &g.edges {
            if edge.subject == edge.object
                || !node_ids.contains(&edge.subject)
                || !node_ids.contains(&edge.object)
            {
                push(
                    ViolationCode::GraphEdgeInvalid,
                    format!("graph {} edge {:?}", g.keyframe_ordinal, edge),
                );
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fixture_bundle_is_valid() {
        let e = fixtures::evidence();
        assert_eq!(validate_evidence(&e), vec![]);
    }

    #[test]
    fn bev_count_mismatch() {
        let mut e = fixtures::evidence_with_keyframes(3);
        assert!(validate_evidence(&e).is_empty());
        e.bev_images.pop();
        let v = validate_evidence(&e);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code.as_str(), "BEV_COUNT_MISMATCH");
    }

    #[test]
    fn confidence_out_of_range() {
        let mut e = fixtures::evidence();
        e.detections[0][0].confidence = 1.2;
        let codes: Vec<_> = validate_evidence(&e).into_iter().map(|v| v.code).collect();
        assert_eq!(codes, vec![ViolationCode::ConfidenceRange]);
    }

    #[test]
    fn disabled_bev_expects_no_images() {
        let mut e = fixtures::evidence();
        e.bev_enabled = false;
        let codes: Vec<_> = validate_evidence(&e).into_iter().map(|v| v.code).collect();
        assert_eq!(codes, vec![ViolationCode::BevCountMismatch]);
        e.bev_images.clear();
        assert!(validate_evidence(&e).is_empty());
    }

    #[test]
    fn budget_and_contacts() {
        let mut e = fixtures::evidence_with_keyframes(3);
        e.budget = 2;
        e.contacts.pop();
        let codes: Vec<_> = validate_evidence(&e).into_iter().map(|v| v.code).collect();
        assert_eq!(codes, vec![ViolationCode::BudgetExceeded, ViolationCode::ContactCountMismatch]);
    }

    #[test]
    fn meta_rejects_tiny_frames() {
        assert!(VideoMeta::new(10, 8, 8, 30.0, "x").is_err());
        assert!(VideoMeta::new(0, 64, 64, 30.0, "x").is_err());
        assert!(VideoMeta::new(10, 64, 64, 0.0, "x").is_err());
        assert!(VideoMeta::new(10, 64, 64, 30.0, "x").is_ok());
    }
}
