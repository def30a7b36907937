//! Small deterministic episodes for tests, golden files and demos.
//!
//! A gripper approaches a cup (GAIN between the first two keyframes), then
//! lifts it together with the cup (STABLE afterwards). Every derived field is
//! produced by the real pipeline stages from hand-placed detections.

use image::{Rgb, RgbImage};

use crate::bev::{canvas, render_bev, BevSpec};
use crate::contact::{episode_contacts, ContactParams};
use crate::geometry::BBox;
use crate::model::{DepthStats, Detection, DetectionSet, EpisodeEvidence, Keyframe, RobotProfile, SelectionReason, VideoMeta};
use crate::perception::link_tracks;
use crate::scene_graph::{aggregate_global, build_local_graph, CameraModel, SceneGraph, DEFAULT_TOLERANCE};

pub const FPS: f64 = 10.0;

pub fn robot() -> RobotProfile {
    RobotProfile {
        name: "UR5e".into(),
        num_arms: 1,
        num_grippers: 1,
        end_effector_types: vec!["parallel-jaw".into()],
        sensors: vec!["front RGB".into(), "wrist RGB".into()],
        workspace_note: "tabletop".into(),
        constraints_note: String::new(),
        gripper_class_labels: vec!["gripper".into()],
    }
}

pub fn plan() -> Vec<String> {
    vec!["reach cup".into(), "grasp cup".into(), "lift cup".into()]
}

/// Frame index of keyframe `k`.
pub fn frame_index(k: usize) -> usize {
    12 + 18 * k
}

fn det(b: [f64; 4], class: &str, conf: f64, depth: f64) -> Detection {
    let mut d = Detection::new(BBox::new(b[0], b[1], b[2], b[3]), class, conf);
    d.depth_stats = Some(DepthStats { median_rel_depth: depth, mean_rel_depth: depth + 0.01 });
    d
}

/// Hand-placed detections for keyframe `k`, before track linking.
pub fn raw_detections(k: usize) -> DetectionSet {
    let (gripper, cup) = match k {
        0 => ([30.0, 120.0, 270.0, 300.0], [300.0, 130.0, 420.0, 290.0]),
        1 => ([150.0, 120.0, 390.0, 300.0], [300.0, 130.0, 420.0, 290.0]),
        _ => ([150.0, 40.0, 390.0, 220.0], [300.0, 50.0, 420.0, 210.0]),
    };
    vec![det(gripper, "gripper", 0.92, 0.40), det(cup, "cup", 0.88, 0.45)]
}

/// Background gradient with flat boxes where the detections are.
pub fn keyframe_image(dets: &[Detection]) -> RgbImage {
    let mut img = RgbImage::from_fn(512, 512, |x, y| {
        let v = 170 + ((x + 2 * y) / 24) as u8;
        Rgb([v, v, v.saturating_sub(10)])
    });
    for d in dets {
        let c = if d.class_label == "gripper" { Rgb([70, 70, 80]) } else { Rgb([190, 40, 40]) };
        let b = &d.bbox;
        canvas::fill_rect(&mut img, b.x_min as i64, b.y_min as i64, b.x_max as i64 - 1, b.y_max as i64 - 1, c);
    }
    img
}

pub fn local_graphs(detections: &[DetectionSet]) -> Vec<SceneGraph> {
    let cam = CameraModel::default();
    detections
        .iter()
        .enumerate()
        .map(|(k, d)| build_local_graph(k, d, &cam, DEFAULT_TOLERANCE).expect("fixture detections carry depth and ids"))
        .collect()
}

/// Fixture with `n` keyframes and BEV images rendered.
pub fn evidence_with_keyframes(n: usize) -> EpisodeEvidence {
    let mut detections: Vec<DetectionSet> = (0..n).map(raw_detections).collect();
    let keyframes: Vec<Keyframe> = (0..n)
        .map(|k| Keyframe {
            frame_index: frame_index(k),
            timestamp: frame_index(k) as f64 / FPS,
            image: keyframe_image(&detections[k]),
            selection_reason: if k == 1 { SelectionReason::UniformBackfill } else { SelectionReason::MotionPeak },
        })
        .collect();
    let tracks = link_tracks(&mut detections);
    let robot = robot();
    let contacts = episode_contacts(&detections, &tracks, &robot, &ContactParams::default());
    let graphs = local_graphs(&detections);
    let global_graph = aggregate_global(&graphs, &tracks);
    let spec = BevSpec::default();
    let bev_images = graphs
        .iter()
        .zip(&keyframes)
        .enumerate()
        .map(|(k, (g, kf))| render_bev(g, kf.timestamp, k, &spec).expect("fixture confidences are valid"))
        .collect();
    EpisodeEvidence {
        meta: VideoMeta::new(frame_index(n) + 10, 640, 480, FPS, "fixture").expect("valid meta"),
        robot,
        plan_steps: Some(plan()),
        budget: 8,
        keyframes,
        detections,
        tracks,
        contacts,
        local_graphs: graphs,
        global_graph,
        bev_enabled: true,
        bev_images,
    }
}

/// Two keyframes, one GAIN transition, one scene edge.
pub fn evidence() -> EpisodeEvidence {
    evidence_with_keyframes(2)
}
