//! Per-keyframe open-vocabulary detection and relative depth, followed by
//! short-track linking.

pub mod backend;
pub mod depth;
pub mod tracking;

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

pub use backend::{
    BackendKind, DepthBackend, DepthBackendRef, DepthScript, DetectionBackend, DetectionBackendRef,
    DetectionScript, MockDepth, MockDetector, WireDetection,
};
pub use depth::{box_depth_stats, nearest_rank_quantile, normalize_depth};
pub use tracking::{link_tracks, LINK_IOU_FLOOR};

use crate::geometry::{BBox, KEYFRAME_SIZE};
use crate::model::{Detection, DetectionSet, Keyframe, TrackSet};
use crate::raster::Plane;

/// Detections kept per keyframe.
pub const MAX_DETECTIONS: usize = 5;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("BACKEND_UNREACHABLE: {0}")]
    Unreachable(String),
    #[error("BACKEND_MALFORMED: {0}")]
    Malformed(String),
    #[error("MISSING_RECORD: {}", .0.display())]
    MissingRecord(PathBuf),
    #[error("INVALID_CONFIG: {0}")]
    InvalidConfig(String),
    #[error("INVALID_KEYFRAME: keyframe image is {0}x{1}, expected 512x512")]
    InvalidKeyframe(u32, u32),
}

impl PerceptionError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Unreachable(_) => "BACKEND_UNREACHABLE",
            Self::Malformed(_) => "BACKEND_MALFORMED",
            Self::MissingRecord(_) => "MISSING_RECORD",
            Self::InvalidConfig(_) => "INVALID_CONFIG",
            Self::InvalidKeyframe(..) => "INVALID_KEYFRAME",
        }
    }
}

fn check_keyframe(kf: &Keyframe) -> Result<(), PerceptionError> {
    let (w, h) = kf.image.dimensions();
    if w != KEYFRAME_SIZE || h != KEYFRAME_SIZE {
        return Err(PerceptionError::InvalidKeyframe(w, h));
    }
    Ok(())
}

/// Turn raw backend detections into a post-processed set: scores checked,
/// boxes clipped to the keyframe, degenerate boxes and out-of-vocabulary
/// labels dropped, then the top [`MAX_DETECTIONS`] by confidence kept.
pub fn postprocess_detections(raw: Vec<WireDetection>, vocabulary: &[String]) -> Result<DetectionSet, PerceptionError> {
    let limit = KEYFRAME_SIZE as f64;
    let mut out = Vec::with_capacity(raw.len());
    for w in raw {
        if !(w.score.is_finite() && (0.0..=1.0).contains(&w.score)) {
            return Err(PerceptionError::Malformed(format!("score {} outside [0, 1]", w.score)));
        }
        if w.bbox.iter().any(|v| !v.is_finite()) {
            return Err(PerceptionError::Malformed(format!("non-finite box {:?}", w.bbox)));
        }
        if !vocabulary.iter().any(|c| *c == w.label) {
            continue;
        }
        let [x0, y0, x1, y1] = w.bbox;
        let bbox = BBox::new(x0, y0, x1, y1).clipped(limit);
        if !bbox.is_proper() {
            continue;
        }
        out.push(Detection::new(bbox, w.label, w.score));
    }
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    out.truncate(MAX_DETECTIONS);
    Ok(out)
}

pub fn detect(backend: &dyn DetectionBackend, vocabulary: &[String], kf: &Keyframe) -> Result<DetectionSet, PerceptionError> {
    check_keyframe(kf)?;
    let raw = backend.detect_raw(kf, vocabulary, MAX_DETECTIONS)?;
    postprocess_detections(raw, vocabulary)
}

/// Nearest-neighbour resample.
pub fn resize_nearest(src: &Plane<f64>, width: usize, height: usize) -> Plane<f64> {
    if src.width == width && src.height == height {
        return src.clone();
    }
    Plane::from_fn(width, height, |x, y| {
        let sx = ((x * src.width) / width).min(src.width - 1);
        let sy = ((y * src.height) / height).min(src.height - 1);
        src.at(sx, sy)
    })
}

/// Normalized relative depth for a keyframe at 512×512.
///
/// The clamp and normalization operate on the backend's native raster; the
/// result is then resampled to keyframe resolution.
pub fn estimate_depth(backend: &dyn DepthBackend, clamp_quantile: f64, kf: &Keyframe) -> Result<Plane<f64>, PerceptionError> {
    check_keyframe(kf)?;
    let raw = backend.depth_raw(kf)?;
    if raw.data.is_empty() || raw.data.len() != raw.width * raw.height {
        return Err(PerceptionError::Malformed("empty depth raster".into()));
    }
    if raw.data.iter().any(|v| !v.is_finite()) {
        return Err(PerceptionError::Malformed("non-finite depth value".into()));
    }
    let norm = normalize_depth(&raw, clamp_quantile);
    let side = KEYFRAME_SIZE as usize;
    Ok(resize_nearest(&norm, side, side))
}

pub fn attach_depth_stats(dets: &mut DetectionSet, depth: &Plane<f64>) {
    for d in dets.iter_mut() {
        d.depth_stats = Some(box_depth_stats(depth, &d.bbox));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionOutput {
    pub detections: Vec<DetectionSet>,
    pub tracks: TrackSet,
}

/// Detect, estimate depth and attach stats for every keyframe (up to
/// `parallelism` at a time), then link tracks across keyframes.
pub fn perceive_keyframes(
    keyframes: &[Keyframe],
    detector: &dyn DetectionBackend,
    depth: &dyn DepthBackend,
    vocabulary: &[String],
    clamp_quantile: f64,
    parallelism: usize,
) -> Result<PerceptionOutput, PerceptionError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| PerceptionError::InvalidConfig(e.to_string()))?;
    let per_kf: Result<Vec<DetectionSet>, PerceptionError> = pool.install(|| {
        keyframes
            .par_iter()
            .map(|kf| {
                let mut dets = detect(detector, vocabulary, kf)?;
                let d = estimate_depth(depth, clamp_quantile, kf)?;
                attach_depth_stats(&mut dets, &d);
                Ok(dets)
            })
            .collect()
    });
    let mut detections = per_kf?;
    let tracks = link_tracks(&mut detections);
    Ok(PerceptionOutput { detections, tracks })
}

#[cfg(test)]
mod tests {
    use super::backend::encode_depth_png16;
    use super::*;
    use crate::http::test_server::{serve, Reply};
    use crate::http::RetryPolicy;
    use crate::model::SelectionReason;
    use image::RgbImage;

    fn kf(frame_index: usize) -> Keyframe {
        Keyframe {
            frame_index,
            timestamp: frame_index as f64 / 10.0,
            image: RgbImage::new(512, 512),
            selection_reason: SelectionReason::MotionPeak,
        }
    }

    fn wire(b: [f64; 4], label: &str, score: f64) -> WireDetection {
        WireDetection { bbox: b, label: label.into(), score }
    }

    fn vocab() -> Vec<String> {
        vec!["cup".into(), "gripper".into()]
    }

    #[test]
    fn cap_keeps_top_five() {
        let scores = [0.3, 0.9, 0.5, 0.7, 0.95, 0.1, 0.6];
        let script = DetectionScript {
            default: scores.iter().map(|&s| wire([0.0, 0.0, 50.0, 50.0], "cup", s)).collect(),
            ..Default::default()
        };
        let m = MockDetector::new(script);
        let dets = detect(&m, &vocab(), &kf(0)).unwrap();
        let got: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
        assert_eq!(got, vec![0.95, 0.9, 0.7, 0.6, 0.5]);
        assert_eq!(m.calls(), 1);
    }

    #[test]
    fn boxes_are_clipped() {
        let m = MockDetector::new(DetectionScript {
            default: vec![wire([-10.0, 0.0, 300.0, 520.0], "cup", 0.8)],
            ..Default::default()
        });
        let dets = detect(&m, &vocab(), &kf(0)).unwrap();
        assert_eq!(dets[0].bbox, BBox::new(0.0, 0.0, 300.0, 512.0));
    }

    #[test]
    fn unknown_labels_and_empty_boxes_dropped() {
        let raw = vec![
            wire([0.0, 0.0, 10.0, 10.0], "spoon", 0.9),
            wire([600.0, 0.0, 700.0, 10.0], "cup", 0.9),
            wire([0.0, 0.0, 10.0, 10.0], "gripper", 0.4),
        ];
        let dets = postprocess_detections(raw, &vocab()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class_label, "gripper");
    }

    #[test]
    fn bad_score_is_malformed() {
        let err = postprocess_detections(vec![wire([0.0, 0.0, 1.0, 1.0], "cup", 1.5)], &vocab()).unwrap_err();
        assert_eq!(err.code(), "BACKEND_MALFORMED");
    }

    #[test]
    fn http_500_is_unreachable() {
        let srv = serve(vec![Reply { status: 500, body: String::new() }]);
        let mut r = DetectionBackendRef::new(BackendKind::Http, srv.url.clone(), vocab());
        r.retry = RetryPolicy { max_retries: 2, initial_backoff_secs: 0.01 };
        let err = detect(r.connect().unwrap().as_ref(), &vocab(), &kf(0)).unwrap_err();
        assert_eq!(err.code(), "BACKEND_UNREACHABLE");
        assert_eq!(srv.hits.load(std::sync::atomic::Ordering::SeqCst), 3);
    }

    #[test]
    fn http_detect_round_trip() {
        let body = r#"{"detections":[{"box":[10,20,110,220],"label":"cup","score":0.8}]}"#;
        let srv = serve(vec![Reply { status: 200, body: body.into() }]);
        let r = DetectionBackendRef::new(BackendKind::Http, format!("{}/", srv.url), vocab());
        let dets = detect(r.connect().unwrap().as_ref(), &vocab(), &kf(0)).unwrap();
        assert_eq!(dets[0].bbox, BBox::new(10.0, 20.0, 110.0, 220.0));
        let sent: serde_json::Value = serde_json::from_str(&srv.requests.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["max_detections"], 5);
        assert_eq!(sent["vocabulary"], serde_json::json!(["cup", "gripper"]));
        assert!(sent["image"].as_str().unwrap().len() > 100);
    }

    #[test]
    fn http_garbage_is_malformed() {
        let srv = serve(vec![Reply { status: 200, body: "{\"dets\": 1}".into() }]);
        let r = DetectionBackendRef::new(BackendKind::Http, srv.url.clone(), vocab());
        let err = detect(r.connect().unwrap().as_ref(), &vocab(), &kf(0)).unwrap_err();
        assert_eq!(err.code(), "BACKEND_MALFORMED");
    }

    #[test]
    fn http_depth_round_trip() {
        use base64::Engine;
        let raster = Plane::from_fn(8, 8, |x, _| x as f64 / 7.0);
        let png = base64::engine::general_purpose::STANDARD.encode(encode_depth_png16(&raster));
        let srv = serve(vec![Reply { status: 200, body: format!("{{\"depth_png16\":\"{png}\"}}") }]);
        let r = DepthBackendRef::new(BackendKind::Http, srv.url.clone());
        let d = estimate_depth(r.connect().unwrap().as_ref(), 1.0, &kf(0)).unwrap();
        assert_eq!((d.width, d.height), (512, 512));
        assert_eq!(d.at(0, 0), 0.0);
        assert_eq!(d.at(511, 300), 1.0);
    }

    #[test]
    fn directory_matches_mock() {
        let dir = tempfile::tempdir().unwrap();
        let payload = vec![wire([5.0, 5.0, 60.0, 80.0], "cup", 0.7), wire([100.0, 5.0, 160.0, 80.0], "gripper", 0.9)];
        let json = serde_json::to_string(&backend::DetectResponse { detections: payload.clone() }).unwrap();
        std::fs::write(dir.path().join("12.det.json"), json).unwrap();
        let d = DetectionBackendRef::new(BackendKind::Directory, dir.path().to_string_lossy(), vocab());
        let from_dir = detect(d.connect().unwrap().as_ref(), &vocab(), &kf(12)).unwrap();
        let m = MockDetector::new(DetectionScript { default: payload, ..Default::default() });
        assert_eq!(from_dir, detect(&m, &vocab(), &kf(12)).unwrap());
        let err = detect(d.connect().unwrap().as_ref(), &vocab(), &kf(13)).unwrap_err();
        assert_eq!(err.code(), "MISSING_RECORD");
    }

    #[test]
    fn directory_depth_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let raster = Plane::from_fn(64, 48, |x, _| if x < 32 { 0.25 } else { 0.75 });
        std::fs::write(dir.path().join("3.depth.png"), encode_depth_png16(&raster)).unwrap();
        let r = DepthBackendRef::new(BackendKind::Directory, dir.path().to_string_lossy());
        let d = estimate_depth(r.connect().unwrap().as_ref(), r.clamp_quantile, &kf(3)).unwrap();
        assert_eq!(d.at(10, 10), 0.0);
        assert_eq!(d.at(500, 500), 1.0);
    }

    #[test]
    fn config_invariants() {
        assert_eq!(DetectionBackendRef::new(BackendKind::Mock, "", vec![]).validate().unwrap_err().code(), "INVALID_CONFIG");
        let mut d = DepthBackendRef::new(BackendKind::Mock, "");
        d.clamp_quantile = 0.0;
        assert!(d.validate().is_err());
        d.clamp_quantile = 1.0;
        assert!(d.validate().is_ok());
        assert_eq!(BackendKind::split("http://x:1"), (BackendKind::Http, "http://x:1".into()));
        assert_eq!(BackendKind::split("mock:s.json"), (BackendKind::Mock, "s.json".into()));
        assert_eq!(BackendKind::split("rec/"), (BackendKind::Directory, "rec/".into()));
    }

    #[test]
    fn wrong_keyframe_size_rejected() {
        let mut k = kf(0);
        k.image = RgbImage::new(100, 100);
        let m = MockDetector::new(DetectionScript::default());
        assert_eq!(detect(&m, &vocab(), &k).unwrap_err().code(), "INVALID_KEYFRAME");
    }

    #[test]
    fn perceive_links_and_attaches() {
        let det = MockDetector::new(DetectionScript {
            default: vec![wire([100.0, 100.0, 200.0, 200.0], "cup", 0.9)],
            ..Default::default()
        });
        let depth = MockDepth::from_fn(|kf| Plane::from_fn(32, 32, move |x, _| (x + kf.frame_index) as f64));
        let kfs: Vec<Keyframe> = (0..4).map(kf).collect();
        let out = perceive_keyframes(&kfs, &det, &depth, &vocab(), 0.8, 2).unwrap();
        assert_eq!(det.calls(), 4);
        assert_eq!(depth.calls(), 4);
        assert_eq!(out.tracks.tracks.len(), 1);
        assert!(out.detections.iter().all(|s| s[0].depth_stats.is_some() && s[0].instance_id == Some(1)));
    }
}
