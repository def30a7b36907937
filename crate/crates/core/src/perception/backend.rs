//! Detection and depth backends: HTTP services, precomputed record
//! directories, and scripted in-memory mocks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::PerceptionError;
use crate::http::{post_json, HttpError, RetryPolicy};
use crate::model::Keyframe;
use crate::raster::{encode_png, Plane};

/// One detection as it travels over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    /// Base64-encoded PNG.
    pub image: String,
    pub vocabulary: Vec<String>,
    pub max_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRequest {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthResponse {
    /// Base64-encoded 16-bit grayscale PNG.
    pub depth_png16: String,
}

pub trait DetectionBackend: Send + Sync {
    /// Raw detections for one keyframe, before any post-processing.
    fn detect_raw(&self, kf: &Keyframe, vocabulary: &[String], max_detections: usize)
        -> Result<Vec<WireDetection>, PerceptionError>;
}

pub trait DepthBackend: Send + Sync {
    /// Raw relative depth for one keyframe at whatever resolution the backend produces.
    fn depth_raw(&self, kf: &Keyframe) -> Result<Plane<f64>, PerceptionError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendKind {
    Http,
    Directory,
    Mock,
}

impl BackendKind {
    /// Classify a command-line backend string: URLs are HTTP, `mock` or
    /// `mock:<script>` is MOCK, anything else is a record directory.
    pub fn split(spec: &str) -> (Self, String) {
        if spec.starts_with("http://") || spec.starts_with("https://") {
            (Self::Http, spec.to_string())
        } else if spec == "mock" {
            (Self::Mock, String::new())
        } else if let Some(rest) = spec.strip_prefix("mock:") {
            (Self::Mock, rest.to_string())
        } else {
            (Self::Directory, spec.to_string())
        }
    }
}

fn default_timeout() -> f64 {
    30.0
}

fn default_clamp() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBackendRef {
    pub kind: BackendKind,
    pub endpoint_or_path: String,
    pub vocabulary: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl DetectionBackendRef {
    pub fn new(kind: BackendKind, endpoint_or_path: impl Into<String>, vocabulary: Vec<String>) -> Self {
        Self {
            kind,
            endpoint_or_path: endpoint_or_path.into(),
            vocabulary,
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        if self.vocabulary.is_empty() {
            return Err(PerceptionError::InvalidConfig("detection vocabulary is empty".into()));
        }
        Ok(())
    }

    pub fn connect(&self) -> Result<Box<dyn DetectionBackend>, PerceptionError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Http => Box::new(HttpDetector {
                url: endpoint(&self.endpoint_or_path, "detect"),
                timeout: Duration::from_secs_f64(self.timeout_secs),
                retry: self.retry,
            }),
            BackendKind::Directory => Box::new(DirectoryDetector { root: PathBuf::from(&self.endpoint_or_path) }),
            BackendKind::Mock if self.endpoint_or_path.is_empty() => Box::new(MockDetector::new(DetectionScript::default())),
            BackendKind::Mock => Box::new(MockDetector::from_file(Path::new(&self.endpoint_or_path))?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthBackendRef {
    pub kind: BackendKind,
    pub endpoint_or_path: String,
    #[serde(default = "default_clamp")]
    pub clamp_quantile: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl DepthBackendRef {
    pub fn new(kind: BackendKind, endpoint_or_path: impl Into<String>) -> Self {
        Self {
            kind,
            endpoint_or_path: endpoint_or_path.into(),
            clamp_quantile: default_clamp(),
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !(self.clamp_quantile > 0.0 && self.clamp_quantile <= 1.0) {
            return Err(PerceptionError::InvalidConfig(format!(
                "clamp_quantile must be in (0, 1], got {}",
                self.clamp_quantile
            )));
        }
        Ok(())
    }

    pub fn connect(&self) -> Result<Box<dyn DepthBackend>, PerceptionError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Http => Box::new(HttpDepth {
                url: endpoint(&self.endpoint_or_path, "depth"),
                timeout: Duration::from_secs_f64(self.timeout_secs),
                retry: self.retry,
            }),
            BackendKind::Directory => Box::new(DirectoryDepth { root: PathBuf::from(&self.endpoint_or_path) }),
            BackendKind::Mock if self.endpoint_or_path.is_empty() => Box::new(MockDepth::new(DepthScript::default())),
            BackendKind::Mock => Box::new(MockDepth::from_file(Path::new(&self.endpoint_or_path))?),
        })
    }
}

fn endpoint(base: &str, route: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), route)
}

fn from_http(e: HttpError) -> PerceptionError {
    match e {
        HttpError::Malformed(m) => PerceptionError::Malformed(m),
        other => PerceptionError::Unreachable(other.to_string()),
    }
}

fn decode_depth_png(bytes: &[u8]) -> Result<Plane<f64>, PerceptionError> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| PerceptionError::Malformed(format!("depth image: {e}")))?
        .into_luma16();
    let (w, h) = img.dimensions();
    Ok(Plane::from_fn(w as usize, h as usize, |x, y| img.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0))
}

/// Encode a `[0, 1]` raster as a 16-bit grayscale PNG (value × 65535).
pub fn encode_depth_png16(depth: &Plane<f64>) -> Vec<u8> {
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(depth.width as u32, depth.height as u32, |x, y| {
        image::Luma([(depth.at(x as usize, y as usize).clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

struct HttpDetector {
    url: String,
    timeout: Duration,
    retry: RetryPolicy,
}

impl DetectionBackend for HttpDetector {
    fn detect_raw(&self, kf: &Keyframe, vocabulary: &[String], max_detections: usize)
        -> Result<Vec<WireDetection>, PerceptionError> {
        let req = DetectRequest { image: B64.encode(encode_png(&kf.image)), vocabulary: vocabulary.to_vec(), max_detections };
        let text = post_json(&self.url, &req, self.timeout, &self.retry).map_err(from_http)?;
        let resp: DetectResponse = serde_json::from_str(&text).map_err(|e| PerceptionError::Malformed(e.to_string()))?;
        Ok(resp.detections)
    }
}

struct HttpDepth {
    url: String,
    timeout: Duration,
    retry: RetryPolicy,
}

impl DepthBackend for HttpDepth {
    fn depth_raw(&self, kf: &Keyframe) -> Result<Plane<f64>, PerceptionError> {
        let req = DepthRequest { image: B64.encode(encode_png(&kf.image)) };
        let text = post_json(&self.url, &req, self.timeout, &self.retry).map_err(from_http)?;
        let resp: DepthResponse = serde_json::from_str(&text).map_err(|e| PerceptionError::Malformed(e.to_string()))?;
        let bytes = B64
            .decode(resp.depth_png16.as_bytes())
            .map_err(|e| PerceptionError::Malformed(format!("depth_png16: {e}")))?;
        decode_depth_png(&bytes)
    }
}

/// Reads `<frame_index>.det.json` records.
pub struct DirectoryDetector {
    pub root: PathBuf,
}

impl DetectionBackend for DirectoryDetector {
    fn detect_raw(&self, kf: &Keyframe, _: &[String], _: usize) -> Result<Vec<WireDetection>, PerceptionError> {
        let path = self.root.join(format!("{}.det.json", kf.frame_index));
        let text = std::fs::read_to_string(&path).map_err(|_| PerceptionError::MissingRecord(path.clone()))?;
        let resp: DetectResponse =
            serde_json::from_str(&text).map_err(|e| PerceptionError::Malformed(format!("{}: {e}", path.display())))?;
        Ok(resp.detections)
    }
}

/// Reads `<frame_index>.depth.png` records (16-bit, value / 65535).
pub struct DirectoryDepth {
    pub root: PathBuf,
}

impl DepthBackend for DirectoryDepth {
    fn depth_raw(&self, kf: &Keyframe) -> Result<Plane<f64>, PerceptionError> {
        let path = self.root.join(format!("{}.depth.png", kf.frame_index));
        let bytes = std::fs::read(&path).map_err(|_| PerceptionError::MissingRecord(path.clone()))?;
        decode_depth_png(&bytes)
    }
}

/// Scripted detector responses: `by_frame` entries win over `default`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionScript {
    pub default: Vec<WireDetection>,
    pub by_frame: BTreeMap<usize, Vec<WireDetection>>,
}

pub struct MockDetector {
    script: DetectionScript,
    calls: AtomicUsize,
}

impl MockDetector {
    pub fn new(script: DetectionScript) -> Self {
        Self { script, calls: AtomicUsize::new(0) }
    }

    pub fn from_file(path: &Path) -> Result<Self, PerceptionError> {
        let text = std::fs::read_to_string(path).map_err(|_| PerceptionError::MissingRecord(path.to_path_buf()))?;
        let script = serde_json::from_str(&text).map_err(|e| PerceptionError::InvalidConfig(format!("mock script: {e}")))?;
        Ok(Self::new(script))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl DetectionBackend for MockDetector {
    fn detect_raw(&self, kf: &Keyframe, _: &[String], _: usize) -> Result<Vec<WireDetection>, PerceptionError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.script.by_frame.get(&kf.frame_index).unwrap_or(&self.script.default).clone())
    }
}

/// Scripted depth: each keyframe gets a constant raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthScript {
    pub default: f64,
    pub by_frame: BTreeMap<usize, f64>,
}

impl Default for DepthScript {
    fn default() -> Self {
        Self { default: 0.5, by_frame: BTreeMap::new() }
    }
}

type DepthFn = dyn Fn(&Keyframe) -> Plane<f64> + Send + Sync;

pub struct MockDepth {
    produce: Box<DepthFn>,
    calls: AtomicUsize,
}

impl MockDepth {
    pub fn new(script: DepthScript) -> Self {
        Self::from_fn(move |kf| {
            let v = script.by_frame.get(&kf.frame_index).copied().unwrap_or(script.default);
            Plane::from_fn(16, 16, |_, _| v)
        })
    }

    pub fn from_fn(f: impl Fn(&Keyframe) -> Plane<f64> + Send + Sync + 'static) -> Self {
        Self { produce: Box::new(f), calls: AtomicUsize::new(0) }
    }

    pub fn from_file(path: &Path) -> Result<Self, PerceptionError> {
        let text = std::fs::read_to_string(path).map_err(|_| PerceptionError::MissingRecord(path.to_path_buf()))?;
        let script = serde_json::from_str(&text).map_err(|e| PerceptionError::InvalidConfig(format!("mock script: {e}")))?;
        Ok(Self::new(script))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl DepthBackend for MockDepth {
    fn depth_raw(&self, kf: &Keyframe) -> Result<Plane<f64>, PerceptionError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok((self.produce)(kf))
    }
}
