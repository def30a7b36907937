//! Scripted synthetic episodes with exact ground truth.
//!
//! Actors are axis-aligned squares whose scripted geometry lives in the
//! 512×512 keyframe coordinate space; frames are rendered at a smaller
//! resolution over a seeded value-noise background. Generation writes a frame
//! directory, per-frame perception records in the record-directory layout,
//! a robot profile, and a ground-truth file.

pub mod oracle;
pub mod scenarios;

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::model::{ContactTransition, RobotProfile};
use crate::perception::backend::encode_depth_png16;
use crate::raster::{encode_png, Plane};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("INVALID_SPEC: {0}")]
    InvalidSpec(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidSpec(_) => "INVALID_SPEC",
            Self::Io { .. } => "IO_ERROR",
        }
    }
}

/// Scripted pose; `cx`, `cy` and `size` are in keyframe pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub frame: usize,
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
    pub rel_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub class_label: String,
    #[serde(default)]
    pub is_gripper: bool,
    pub waypoints: Vec<Waypoint>,
}

fn default_width() -> u32 {
    160
}

fn default_height() -> u32 {
    120
}

fn default_fps() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub duration_frames: usize,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub actors: Vec<ActorSpec>,
    /// Inclusive `(start_frame, end_frame)` intervals of scripted motion.
    #[serde(default)]
    pub motion_bursts: Vec<(usize, usize)>,
    #[serde(default)]
    pub failure_frame: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// Scripted state of one actor at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
    pub rel_depth: f64,
}

impl ActorSpec {
    /// Linear interpolation between waypoints, held constant outside them.
    pub fn pose_at(&self, frame: usize) -> Pose {
        let w = &self.waypoints;
        let pose = |p: &Waypoint| Pose { cx: p.cx, cy: p.cy, size: p.size, rel_depth: p.rel_depth };
        if frame <= w[0].frame {
            return pose(&w[0]);
        }
        for pair in w.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if frame <= b.frame {
                let t = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
                let lerp = |x: f64, y: f64| x + (y - x) * t;
                return Pose {
                    cx: lerp(a.cx, b.cx),
                    cy: lerp(a.cy, b.cy),
                    size: lerp(a.size, b.size),
                    rel_depth: lerp(a.rel_depth, b.rel_depth),
                };
            }
        }
        pose(w.last().unwrap())
    }
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.duration_frames < 2 {
            return bad("duration_frames must be >= 2".into());
        }
        if self.width < 16 || self.height < 16 {
            return bad("frames must be at least 16x16".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad("fps must be > 0".into());
        }
        for (i, a) in self.actors.iter().enumerate() {
            if a.class_label.trim().is_empty() {
                return bad(format!("actor {i} has an empty class label"));
            }
            if a.waypoints.is_empty() {
                return bad(format!("actor {i} has no waypoints"));
            }
            if a.waypoints.windows(2).any(|p| p[0].frame >= p[1].frame) {
                return bad(format!("actor {i} waypoints are not strictly sorted by frame"));
            }
            for w in &a.waypoints {
                if w.frame >= self.duration_frames {
                    return bad(format!("actor {i} waypoint frame {} beyond duration", w.frame));
                }
                if !(w.size > 0.0 && w.size.is_finite() && w.cx.is_finite() && w.cy.is_finite()) {
                    return bad(format!("actor {i} has a degenerate waypoint"));
                }
                if !(0.0..=1.0).contains(&w.rel_depth) {
                    return bad(format!("actor {i} rel_depth outside [0, 1]"));
                }
            }
        }
        for &(s, e) in &self.motion_bursts {
            if s > e || e >= self.duration_frames {
                return bad(format!("burst ({s}, {e}) outside the episode"));
            }
        }
        if let Some(f) = self.failure_frame {
            if f >= self.duration_frames {
                return bad(format!("failure_frame {f} beyond duration"));
            }
        }
        Ok(())
    }

    pub fn gripper_labels(&self) -> Vec<String> {
        let mut v: Vec<String> = self.actors.iter().filter(|a| a.is_gripper).map(|a| a.class_label.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Every actor class label, sorted and deduplicated.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self.actors.iter().map(|a| a.class_label.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Sorted union of all waypoint frames: the scripted key poses.
    pub fn key_frames(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.actors.iter().flat_map(|a| a.waypoints.iter().map(|w| w.frame)).collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Smooth value noise from a lattice of seeded random values.
struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, width: u32, height: u32, cell: f64) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let lattice = (0..cols * rows).map(|_| rng.random::<f64>()).collect();
        Self { cell, cols, lattice }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (sx, sy) = (s(fx), s(fy));
        let v = |i: usize, j: usize| self.lattice[j * self.cols + i];
        let top = v(x0, y0) * (1.0 - sx) + v(x0 + 1, y0) * sx;
        let bottom = v(x0, y0 + 1) * (1.0 - sx) + v(x0 + 1, y0 + 1) * sx;
        top * (1.0 - sy) + bottom * sy
    }
}

const ACTOR_COLORS: [[f64; 3]; 6] = [
    [60.0, 60.0, 75.0],
    [200.0, 50.0, 45.0],
    [45.0, 150.0, 70.0],
    [40.0, 90.0, 190.0],
    [220.0, 170.0, 40.0],
    [150.0, 70.0, 160.0],
];

/// Deterministic renderer for one scenario.
pub struct Renderer<'a> {
    spec: &'a ScenarioSpec,
    background: RgbImage,
    textures: Vec<ValueNoise>,
}

impl<'a> Renderer<'a> {
    pub fn new(spec: &'a ScenarioSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (w, h) = (spec.width, spec.height);
        let coarse = ValueNoise::new(&mut rng, w, h, 14.0);
        let fine = ValueNoise::new(&mut rng, w, h, 5.0);
        let background = RgbImage::from_fn(w, h, |x, y| {
            let (xf, yf) = (x as f64, y as f64);
            let v = 60.0 + 110.0 * coarse.at(xf, yf) + 60.0 * fine.at(xf, yf);
            let c = v.round().clamp(0.0, 255.0) as u8;
            Rgb([c, c, c.saturating_sub(8)])
        });
        // Actor textures are in actor-local keyframe units so they travel with the actor.
        let textures = spec.actors.iter().map(|_| ValueNoise::new(&mut rng, 1024, 1024, 24.0)).collect();
        Self { spec, background, textures }
    }

    /// Actor indices ordered far-to-near (drawing order).
    fn draw_order(&self, frame: usize) -> Vec<(usize, Pose)> {
        let mut v: Vec<(usize, Pose)> = self.spec.actors.iter().enumerate().map(|(i, a)| (i, a.pose_at(frame))).collect();
        v.sort_by(|a, b| b.1.rel_depth.total_cmp(&a.1.rel_depth).then(a.0.cmp(&b.0)));
        v
    }

    /// Pixel span `[lo, hi)` covered by an actor along one axis at frame resolution.
    fn span(center: f64, size: f64, scale: f64, limit: u32) -> (u32, u32) {
        let lo = ((center - size / 2.0) * scale).round().clamp(0.0, limit as f64) as u32;
        let hi = ((center + size / 2.0) * scale).round().clamp(0.0, limit as f64) as u32;
        (lo, hi)
    }

    pub fn frame(&self, frame: usize) -> RgbImage {
        let mut img = self.background.clone();
        let (w, h) = (self.spec.width, self.spec.height);
        let (sx, sy) = (w as f64 / 512.0, h as f64 / 512.0);
        for (i, p) in self.draw_order(frame) {
            let base = ACTOR_COLORS[i % ACTOR_COLORS.len()];
            let (x0, x1) = Self::span(p.cx, p.size, sx, w);
            let (y0, y1) = Self::span(p.cy, p.size, sy, h);
            let left = p.cx - p.size / 2.0;
            let top = p.cy - p.size / 2.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let lx = (x as f64 + 0.5) / sx - left;
                    let ly = (y as f64 + 0.5) / sy - top;
                    let shade = 0.75 + 0.5 * self.textures[i].at(lx.max(0.0) + 1.0, ly.max(0.0) + 1.0);
                    let px = base.map(|c| (c * shade).round().clamp(0.0, 255.0) as u8);
                    img.put_pixel(x, y, Rgb(px));
                }
            }
        }
        img
    }

    /// Relative depth raster at frame resolution: 1.0 background, actors painted far-to-near.
    pub fn depth(&self, frame: usize) -> Plane<f64> {
        let (w, h) = (self.spec.width, self.spec.height);
        let (sx, sy) = (w as f64 / 512.0, h as f64 / 512.0);
        let mut d = Plane::from_fn(w as usize, h as usize, |_, _| 1.0);
        for (_, p) in self.draw_order(frame) {
            let (x0, x1) = Self::span(p.cx, p.size, sx, w);
            let (y0, y1) = Self::span(p.cy, p.size, sy, h);
            for y in y0..y1 {
                for x in x0..x1 {
                    d.data[y as usize * w as usize + x as usize] = p.rel_depth;
                }
            }
        }
        d
    }

    /// Detection record in the wire schema: exact boxes, confidence 0.9.
    pub fn detections(&self, frame: usize) -> serde_json::Value {
        let dets: Vec<serde_json::Value> = self
            .spec
            .actors
            .iter()
            .map(|a| {
                let p = a.pose_at(frame);
                let half = p.size / 2.0;
                json!({
                    "box": [p.cx - half, p.cy - half, p.cx + half, p.cy + half],
                    "label": a.class_label,
                    "score": 0.9,
                })
            })
            .collect();
        json!({ "detections": dets })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub duration_frames: usize,
    pub fps: f64,
    pub motion_bursts: Vec<(usize, usize)>,
    pub failure_frame: Option<usize>,
    /// Scripted key poses at which `contacts` are evaluated.
    pub key_frames: Vec<usize>,
    pub contacts: Vec<ContactTransition>,
}

/// Paths of a generated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePaths {
    pub root: PathBuf,
    pub frames: PathBuf,
    pub perception: PathBuf,
    pub ground_truth: PathBuf,
    pub robot: PathBuf,
}

impl EpisodePaths {
    pub fn under(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            frames: root.join("frames"),
            perception: root.join("perception"),
            ground_truth: root.join("ground_truth.json"),
            robot: root.join("robot.json"),
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    fs::write(path, bytes).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })
}

pub fn robot_profile(spec: &ScenarioSpec) -> RobotProfile {
    RobotProfile {
        name: "synthetic-arm".into(),
        num_arms: 1,
        num_grippers: spec.gripper_labels().len().max(1) as u32,
        end_effector_types: vec!["parallel-jaw".into()],
        sensors: vec!["static RGB camera".into()],
        workspace_note: "synthetic tabletop".into(),
        constraints_note: String::new(),
        gripper_class_labels: spec.gripper_labels(),
    }
}

pub fn ground_truth(spec: &ScenarioSpec) -> GroundTruth {
    let key_frames = spec.key_frames();
    GroundTruth {
        duration_frames: spec.duration_frames,
        fps: spec.fps,
        motion_bursts: spec.motion_bursts.clone(),
        failure_frame: spec.failure_frame,
        contacts: oracle::oracle_contacts(spec, &key_frames),
        key_frames,
    }
}

/// Write the episode under `out`:
/// `frames/<NNNNNN>.png`, `perception/<f>.det.json`, `perception/<f>.depth.png`,
/// `robot.json` and `ground_truth.json`.
pub fn generate_episode(spec: &ScenarioSpec, out: &Path) -> Result<(EpisodePaths, GroundTruth), SynthError> {
    spec.validate()?;
    let paths = EpisodePaths::under(out);
    for dir in [&paths.frames, &paths.perception] {
        fs::create_dir_all(dir).map_err(|source| SynthError::Io { path: dir.clone(), source })?;
    }
    let r = Renderer::new(spec);
    for f in 0..spec.duration_frames {
        write(&paths.frames.join(format!("{f:06}.png")), &encode_png(&r.frame(f)))?;
        let dets = serde_json::to_string_pretty(&r.detections(f)).expect("json");
        write(&paths.perception.join(format!("{f}.det.json")), dets.as_bytes())?;
        write(&paths.perception.join(format!("{f}.depth.png")), &encode_depth_png16(&r.depth(f)))?;
    }
    let robot = serde_json::to_string_pretty(&robot_profile(spec)).expect("json");
    write(&paths.robot, robot.as_bytes())?;
    let gt = ground_truth(spec);
    write(&paths.ground_truth, serde_json::to_string_pretty(&gt).expect("json").as_bytes())?;
    Ok((paths, gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::open_frame_source;
    use crate::model::ContactLabel;
    use crate::saliency::{saliency_series, KeyframeSelectionParams};

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn static_scene_has_no_motion() {
        let spec = ScenarioSpec { actors: vec![], ..scenarios::scaling(12, 3) };
        let dir = tempfile::tempdir().unwrap();
        let (paths, _) = generate_episode(&spec, dir.path()).unwrap();
        let src = open_frame_source(&paths.frames, spec.fps).unwrap();
        let curve = saliency_series(&src, &KeyframeSelectionParams::default()).unwrap();
        assert!(curve.scores.iter().all(|&s| s < 0.1), "{:?}", curve.scores);
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = scenarios::burst(7);
        let short = ScenarioSpec { duration_frames: 30, motion_bursts: vec![], failure_frame: None, ..spec };
        let short = ScenarioSpec {
            actors: short.actors.iter().map(|a| ActorSpec { waypoints: a.waypoints.iter().copied().filter(|w| w.frame < 30).collect(), ..a.clone() }).filter(|a| !a.waypoints.is_empty()).collect(),
            ..short
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (pa, _) = generate_episode(&short, a.path()).unwrap();
        let (pb, _) = generate_episode(&short, b.path()).unwrap();
        assert_eq!(dir_bytes(&pa.frames), dir_bytes(&pb.frames));
        assert_eq!(dir_bytes(&pa.perception), dir_bytes(&pb.perception));
        let other = ScenarioSpec { seed: short.seed + 1, ..short.clone() };
        assert_ne!(Renderer::new(&other).frame(0), Renderer::new(&short).frame(0));
    }

    #[test]
    fn approach_grasp_ground_truth() {
        let gt = ground_truth(&scenarios::approach_grasp());
        assert!(gt.contacts.iter().any(|c| c.label == ContactLabel::Gain));
        let gt = ground_truth(&scenarios::drop());
        assert!(gt.contacts.iter().any(|c| c.label == ContactLabel::Loss));
    }

    #[test]
    fn interpolation() {
        let a = ActorSpec {
            class_label: "cup".into(),
            is_gripper: false,
            waypoints: vec![
                Waypoint { frame: 10, cx: 100.0, cy: 100.0, size: 50.0, rel_depth: 0.2 },
                Waypoint { frame: 20, cx: 200.0, cy: 100.0, size: 70.0, rel_depth: 0.4 },
            ],
        };
        assert_eq!(a.pose_at(0).cx, 100.0);
        let mid = a.pose_at(15);
        assert_eq!((mid.cx, mid.size), (150.0, 60.0));
        assert!((mid.rel_depth - 0.3).abs() < 1e-12);
        assert_eq!(a.pose_at(99).cx, 200.0);
    }

    #[test]
    fn invalid_specs() {
        let mut s = scenarios::approach_grasp();
        s.actors[0].waypoints.reverse();
        assert_eq!(s.validate().unwrap_err().code(), "INVALID_SPEC");
        let mut s = scenarios::approach_grasp();
        s.motion_bursts.push((5, 500));
        assert!(s.validate().is_err());
        assert_eq!(ScenarioSpec::from_json("{not json").unwrap_err().code(), "INVALID_SPEC");
        assert!(ScenarioSpec::from_json(r#"{"duration_frames": 1}"#).is_err());
        assert!(ScenarioSpec::from_json(r#"{"duration_frames": 5}"#).is_ok());
    }

    #[test]
    fn depth_and_records_match_script() {
        let spec = scenarios::approach_grasp();
        let r = Renderer::new(&spec);
        let d = r.depth(0);
        assert_eq!(d.at(0, 0), 1.0);
        let p = spec.actors[1].pose_at(0);
        let (x, y) = ((p.cx / 512.0 * 160.0) as usize, (p.cy / 512.0 * 120.0) as usize);
        assert_eq!(d.at(x, y), p.rel_depth);
        let rec = r.detections(0);
        assert_eq!(rec["detections"].as_array().unwrap().len(), spec.actors.len());
        assert_eq!(rec["detections"][0]["score"], 0.9);
    }
}
