//! Run configuration: JSON file, then command-line flags, then environment.

use std::path::{Path, PathBuf};

use kite_core::contact::ContactParams;
use kite_core::perception::backend::{BackendKind, DepthBackendRef, DetectionBackendRef};
use kite_core::pipeline::{PipelineError, PipelineParams};
use kite_core::saliency::{KeyframeMode, KeyframeSelectionParams};
use kite_core::scene_graph::DEFAULT_TOLERANCE;
use kite_core::vlm::{VlmBackendRef, VlmKind};
use serde::{Deserialize, Serialize};

pub const ENV_VLM_URL: &str = "KITE_VLM_URL";
pub const ENV_OVD_URL: &str = "KITE_OVD_URL";
pub const ENV_DEPTH_URL: &str = "KITE_DEPTH_URL";
pub const ENV_VLM_MODEL: &str = "KITE_VLM_MODEL";
pub const ENV_VLM_TIMEOUT: &str = "KITE_VLM_TIMEOUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fps: f64,
    pub budget: usize,
    pub nms_window: usize,
    pub keyframe_mode: KeyframeMode,
    pub no_bev: bool,
    pub contact: ContactParams,
    pub relation_tolerance: f64,
    pub depth_clamp_quantile: f64,
    /// Object classes to ask the detector for; gripper labels are always added.
    pub vocabulary: Vec<String>,
    /// Detection backend: URL, record directory, or `mock[:<script>]`.
    pub ovd: Option<String>,
    /// Depth backend, same forms as `ovd`.
    pub depth: Option<String>,
    /// VLM backend: chat URL or `mock[:<script>]`.
    pub vlm: Option<String>,
    pub vlm_model: String,
    pub vlm_timeout_secs: f64,
    pub backend_timeout_secs: f64,
    pub parallelism: usize,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fps: 10.0,
            budget: 8,
            nms_window: 5,
            keyframe_mode: KeyframeMode::Motion,
            no_bev: false,
            contact: ContactParams::default(),
            relation_tolerance: DEFAULT_TOLERANCE,
            depth_clamp_quantile: 0.8,
            vocabulary: Vec::new(),
            ovd: None,
            depth: None,
            vlm: None,
            vlm_model: String::new(),
            vlm_timeout_secs: 120.0,
            backend_timeout_secs: 30.0,
            parallelism: 4,
            out: None,
            seed: None,
        }
    }
}

/// Values given on the command line; `None` leaves the lower layer in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub fps: Option<f64>,
    pub budget: Option<usize>,
    pub nms_window: Option<usize>,
    pub keyframe_mode: Option<KeyframeMode>,
    pub no_bev: bool,
    pub vocabulary: Option<Vec<String>>,
    pub ovd: Option<String>,
    pub depth: Option<String>,
    pub vlm: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    /// Layer defaults, an optional config file, flags and environment, in
    /// increasing priority. `env` is the variable lookup.
    pub fn resolve(
        config_file: Option<&Path>,
        flags: &Overrides,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, PipelineError> {
        let mut c = match config_file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        c.apply_flags(flags);
        c.apply_env(env)?;
        c.validate()?;
        Ok(c)
    }

    pub fn apply_flags(&mut self, f: &Overrides) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut self.fps, &f.fps);
        set(&mut self.budget, &f.budget);
        set(&mut self.nms_window, &f.nms_window);
        set(&mut self.keyframe_mode, &f.keyframe_mode);
        set(&mut self.vocabulary, &f.vocabulary);
        if f.no_bev {
            self.no_bev = true;
        }
        for (slot, v) in [(&mut self.ovd, &f.ovd), (&mut self.depth, &f.depth), (&mut self.vlm, &f.vlm)] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        if f.out.is_some() {
            self.out.clone_from(&f.out);
        }
        if f.seed.is_some() {
            self.seed = f.seed;
        }
    }

    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), PipelineError> {
        let get = |k: &str| env(k).filter(|v| !v.trim().is_empty());
        if let Some(v) = get(ENV_VLM_URL) {
            self.vlm = Some(v);
        }
        if let Some(v) = get(ENV_OVD_URL) {
            self.ovd = Some(v);
        }
        if let Some(v) = get(ENV_DEPTH_URL) {
            self.depth = Some(v);
        }
        if let Some(v) = get(ENV_VLM_MODEL) {
            self.vlm_model = v;
        }
        if let Some(v) = get(ENV_VLM_TIMEOUT) {
            self.vlm_timeout_secs = v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{ENV_VLM_TIMEOUT} must be a number of seconds, got {v:?}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(invalid(format!("fps must be > 0, got {}", self.fps)));
        }
        if !(self.vlm_timeout_secs.is_finite() && self.vlm_timeout_secs > 0.0) {
            return Err(invalid("VLM timeout must be > 0"));
        }
        if !(self.backend_timeout_secs.is_finite() && self.backend_timeout_secs > 0.0) {
            return Err(invalid("backend timeout must be > 0"));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism must be >= 1"));
        }
        self.pipeline_params().validate()
    }

    pub fn selection(&self) -> KeyframeSelectionParams {
        KeyframeSelectionParams {
            budget: self.budget,
            nms_window: self.nms_window,
            mode: self.keyframe_mode,
            ..KeyframeSelectionParams::default()
        }
    }

    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            selection: self.selection(),
            contact: self.contact,
            relation_tolerance: self.relation_tolerance,
            bev_enabled: !self.no_bev,
            depth_clamp_quantile: self.depth_clamp_quantile,
            vocabulary: self.vocabulary.clone(),
            parallelism: self.parallelism,
            ..PipelineParams::default()
        }
    }

    pub fn detection_ref(&self, vocabulary: Vec<String>) -> Result<DetectionBackendRef, PipelineError> {
        let spec = self.ovd.as_deref().ok_or_else(|| invalid("no detection backend configured (--ovd)"))?;
        let (kind, target) = BackendKind::split(spec);
        let mut r = DetectionBackendRef::new(kind, target, vocabulary);
        r.timeout_secs = self.backend_timeout_secs;
        Ok(r)
    }

    pub fn depth_ref(&self) -> Result<DepthBackendRef, PipelineError> {
        let spec = self.depth.as_deref().ok_or_else(|| invalid("no depth backend configured (--depth)"))?;
        let (kind, target) = BackendKind::split(spec);
        let mut r = DepthBackendRef::new(kind, target);
        r.clamp_quantile = self.depth_clamp_quantile;
        r.timeout_secs = self.backend_timeout_secs;
        Ok(r)
    }

    /// `None` when no VLM is configured.
    pub fn vlm_ref(&self) -> Option<VlmBackendRef> {
        let spec = self.vlm.as_deref()?;
        let (kind, target) = match BackendKind::split(spec) {
            (BackendKind::Http, url) => (VlmKind::HttpChat, url),
            (BackendKind::Mock, script) => (VlmKind::Mock, script),
            (BackendKind::Directory, path) => (VlmKind::Mock, path),
        };
        let mut r = VlmBackendRef::new(kind, target, self.vlm_model.clone());
        r.timeout_secs = self.vlm_timeout_secs;
        Some(r)
    }
}
