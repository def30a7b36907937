//! Ready-made scenario scripts used by tests and the `simulate` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActorSpec, ScenarioSpec, Waypoint};

fn still(frame: usize, cx: f64, cy: f64, size: f64, rel_depth: f64) -> Waypoint {
    Waypoint { frame, cx, cy, size, rel_depth }
}

fn actor(label: &str, is_gripper: bool, waypoints: Vec<Waypoint>) -> ActorSpec {
    ActorSpec { class_label: label.into(), is_gripper, waypoints }
}

/// Keyframe-pixel speed of an actor during a burst.
pub const BURST_SPEED: f64 = 12.0;

/// Quiet frames kept on each side of a burst inside its timeline segment.
pub const BURST_PADDING: usize = 8;

/// Episode with 3 to 8 short motion bursts separated by fully static stretches.
///
/// The timeline is cut into one equal segment per burst and each burst is
/// placed at a random offset inside its segment. During a burst one randomly
/// chosen actor translates in a random direction, bouncing off the borders.
/// The failure frame sits in the middle of the last burst.
pub fn burst(seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b69_7465);
    let duration = rng.random_range(200..=260usize);
    let count = rng.random_range(3..=8usize);
    let segment = duration / count;

    let mut bursts = Vec::with_capacity(count);
    for b in 0..count {
        let len = rng.random_range(5..=6usize);
        let lo = b * segment + BURST_PADDING;
        let hi = (b + 1) * segment - BURST_PADDING - len;
        let start = rng.random_range(lo..=hi);
        bursts.push((start, start + len - 1));
    }

    let labels = [("gripper", true, 150.0, 0.3), ("cup", false, 110.0, 0.55), ("bowl", false, 130.0, 0.75)];
    let mut poses: Vec<(f64, f64)> = vec![(130.0, 150.0), (300.0, 330.0), (400.0, 160.0)];
    let mut paths: Vec<Vec<Waypoint>> = labels
        .iter()
        .zip(&poses)
        .map(|(&(_, _, size, depth), &(cx, cy))| vec![still(0, cx, cy, size, depth)])
        .collect();

    for &(start, end) in &bursts {
        let who = rng.random_range(0..labels.len());
        let (_, _, size, depth) = labels[who];
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let (mut dx, mut dy) = (angle.cos(), angle.sin());
        let travel = BURST_SPEED * (end - start) as f64;
        let (lo, hi) = (size / 2.0 + 8.0, 512.0 - size / 2.0 - 8.0);
        let (cx, cy) = poses[who];
        let mut nx = cx + dx * travel;
        let mut ny = cy + dy * travel;
        if !(lo..=hi).contains(&nx) {
            dx = -dx;
            nx = (cx + dx * travel).clamp(lo, hi);
        }
        if !(lo..=hi).contains(&ny) {
            dy = -dy;
            ny = (cy + dy * travel).clamp(lo, hi);
        }
        let path = &mut paths[who];
        if path.last().map(|w| w.frame) != Some(start) {
            path.push(still(start, cx, cy, size, depth));
        }
        path.push(still(end, nx, ny, size, depth));
        poses[who] = (nx, ny);
    }

    let actors = labels
        .iter()
        .zip(paths)
        .map(|(&(label, is_gripper, _, _), w)| actor(label, is_gripper, w))
        .collect();
    let failure_frame = bursts.last().map(|&(s, e)| (s + e) / 2);
    ScenarioSpec {
        duration_frames: duration,
        width: 160,
        height: 120,
        fps: 10.0,
        actors,
        motion_bursts: bursts,
        failure_frame,
        seed,
    }
}

/// Small-resolution episode of arbitrary length: a gripper sweeps across a
/// static cup over the whole duration.
pub fn scaling(duration_frames: usize, seed: u64) -> ScenarioSpec {
    let last = duration_frames.saturating_sub(1);
    ScenarioSpec {
        duration_frames,
        width: 64,
        height: 48,
        fps: 10.0,
        actors: vec![
            actor("gripper", true, vec![still(0, 100.0, 250.0, 140.0, 0.3), still(last, 400.0, 250.0, 140.0, 0.3)]),
            actor("cup", false, vec![still(0, 256.0, 300.0, 110.0, 0.6)]),
        ],
        motion_bursts: vec![(0, last)],
        failure_frame: None,
        seed,
    }
}

/// Gripper closes on a cup between frames 0 and 20 and then holds still.
pub fn approach_grasp() -> ScenarioSpec {
    ScenarioSpec {
        duration_frames: 40,
        width: 160,
        height: 120,
        fps: 10.0,
        actors: vec![
            actor("gripper", true, vec![still(0, 100.0, 256.0, 160.0, 0.3), still(20, 250.0, 256.0, 160.0, 0.35)]),
            actor("cup", false, vec![still(0, 300.0, 256.0, 120.0, 0.45)]),
        ],
        motion_bursts: vec![(0, 20)],
        failure_frame: None,
        seed: 11,
    }
}

/// Gripper holds a cup until frame 15, after which the cup falls away.
pub fn drop() -> ScenarioSpec {
    ScenarioSpec {
        duration_frames: 40,
        width: 160,
        height: 120,
        fps: 10.0,
        actors: vec![
            actor("gripper", true, vec![still(0, 256.0, 200.0, 140.0, 0.3)]),
            actor("cup", false, vec![still(0, 256.0, 230.0, 100.0, 0.4), still(15, 256.0, 230.0, 100.0, 0.4), still(30, 256.0, 420.0, 100.0, 0.5)]),
        ],
        motion_bursts: vec![(15, 30)],
        failure_frame: Some(22),
        seed: 12,
    }
}
