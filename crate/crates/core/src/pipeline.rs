//! End-to-end assembly of an [`EpisodeEvidence`] from a frame source.

use thiserror::Error;

use crate::bev::{render_bev, BevError, BevSpec};
use crate::contact::{episode_contacts, ContactError, ContactParams};
use crate::evidence::EvidenceError;
use crate::ingest::{FrameSource, IngestError};
use crate::model::{EpisodeEvidence, Keyframe, ModelError, RobotProfile};
use crate::perception::backend::{DepthBackend, DetectionBackend};
use crate::perception::{perceive_keyframes, PerceptionError};
use crate::saliency::{saliency_series, select_keyframes, KeyframeSelectionParams, SaliencyCurve, SaliencyError, SelectedFrame};
use crate::scene_graph::{aggregate_global, build_local_graph, CameraModel, SceneGraphError, DEFAULT_TOLERANCE};
use crate::synth::SynthError;
use crate::vlm::VlmError;

/// A stage failure, tagged with the module it came from.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[ingest] {0}")]
    Ingest(#[from] IngestError),
    #[error("[saliency] {0}")]
    Saliency(#[from] SaliencyError),
    #[error("[perception] {0}")]
    Perception(#[from] PerceptionError),
    #[error("[contact] {0}")]
    Contact(#[from] ContactError),
    #[error("[scene-graph] {0}")]
    SceneGraph(#[from] SceneGraphError),
    #[error("[bev-render] {0}")]
    Bev(#[from] BevError),
    #[error("[evidence] {0}")]
    Evidence(#[from] EvidenceError),
    #[error("[vlm] {0}")]
    Vlm(#[from] VlmError),
    #[error("[synthetic] {0}")]
    Synth(#[from] SynthError),
    #[error("[model] {0}")]
    Model(#[from] ModelError),
    #[error("[config] INVALID_CONFIG: {0}")]
    Config(String),
}

impl PipelineError {
    /// Whether the failure came from an external inference backend rather
    /// than from the caller's inputs or configuration.
    pub fn is_backend_failure(&self) -> bool {
        match self {
            Self::Perception(e) => matches!(
                e,
                PerceptionError::Unreachable(_) | PerceptionError::Malformed(_) | PerceptionError::MissingRecord(_)
            ),
            Self::Vlm(e) => !matches!(e, VlmError::InvalidConfig(_)),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub selection: KeyframeSelectionParams,
    pub contact: ContactParams,
    pub relation_tolerance: f64,
    pub camera: CameraModel<f64>,
    pub bev: BevSpec,
    pub bev_enabled: bool,
    pub depth_clamp_quantile: f64,
    pub vocabulary: Vec<String>,
    pub parallelism: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            selection: KeyframeSelectionParams::default(),
            contact: ContactParams::default(),
            relation_tolerance: DEFAULT_TOLERANCE,
            camera: CameraModel::default(),
            bev: BevSpec::default(),
            bev_enabled: true,
            depth_clamp_quantile: 0.8,
            vocabulary: Vec::new(),
            parallelism: 4,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.selection.validate()?;
        self.contact.validate()?;
        self.bev.validate()?;
        if !(self.relation_tolerance.is_finite() && self.relation_tolerance >= 0.0) {
            return Err(PipelineError::Config(format!("relation tolerance must be >= 0, got {}", self.relation_tolerance)));
        }
        if !(self.depth_clamp_quantile > 0.0 && self.depth_clamp_quantile <= 1.0) {
            return Err(PipelineError::Config("depth clamp quantile must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Configured vocabulary plus any gripper labels of the robot.
    pub fn vocabulary_for(&self, robot: &RobotProfile) -> Vec<String> {
        let mut v = self.vocabulary.clone();
        v.extend(robot.gripper_class_labels.iter().cloned());
        v.sort();
        v.dedup();
        v
    }
}

/// Saliency curve plus the frames chosen from it.
pub fn choose_keyframes(src: &FrameSource, params: &KeyframeSelectionParams) -> Result<(SaliencyCurve, Vec<SelectedFrame>), PipelineError> {
    params.validate()?;
    let curve = saliency_series(src, params)?;
    let selected = select_keyframes(&curve, params)?;
    Ok((curve, selected))
}

/// Decode the selected frames and resize them to keyframe resolution.
pub fn load_keyframes(src: &FrameSource, selected: &[SelectedFrame]) -> Result<Vec<Keyframe>, PipelineError> {
    selected
        .iter()
        .map(|s| Ok(Keyframe::from_frame(&src.read_frame(s.frame_index as i64)?, s.reason)))
        .collect()
}

/// Run perception, contact, scene-graph and BEV stages over chosen keyframes.
pub fn assemble_evidence(
    src: &FrameSource,
    robot: RobotProfile,
    plan_steps: Option<Vec<String>>,
    keyframes: Vec<Keyframe>,
    detector: &dyn DetectionBackend,
    depth: &dyn DepthBackend,
    params: &PipelineParams,
) -> Result<EpisodeEvidence, PipelineError> {
    params.validate()?;
    robot.validate(true)?;
    let vocabulary = params.vocabulary_for(&robot);
    let out = perceive_keyframes(&keyframes, detector, depth, &vocabulary, params.depth_clamp_quantile, params.parallelism)?;
    let contacts = episode_contacts(&out.detections, &out.tracks, &robot, &params.contact);
    let local_graphs = out
        .detections
        .iter()
        .enumerate()
        .map(|(k, d)| build_local_graph(k, d, &params.camera, params.relation_tolerance))
        .collect::<Result<Vec<_>, _>>()?;
    let global_graph = aggregate_global(&local_graphs, &out.tracks);
    let bev_images = if params.bev_enabled {
        local_graphs
            .iter()
            .zip(&keyframes)
            .enumerate()
            .map(|(k, (g, kf))| render_bev(g, kf.timestamp, k, &params.bev))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    Ok(EpisodeEvidence {
        meta: src.meta.clone(),
        robot,
        plan_steps,
        budget: params.selection.budget,
        keyframes,
        detections: out.detections,
        tracks: out.tracks,
        contacts,
        local_graphs,
        global_graph,
        bev_enabled: params.bev_enabled,
        bev_images,
    })
}
