//! Brute-force reference answers computed straight from the scenario script.
//!
//! Nothing here calls into the pipeline modules; geometry is recomputed from
//! first principles so the acceptance tests compare two independent paths.

use std::collections::BTreeSet;

use crate::model::{ContactFlag, ContactLabel, ContactTransition};

use super::{Pose, ScenarioSpec};

const GAIN_LOSS_IOU: f64 = 0.1;
const GAIN_LOSS_DIST: f64 = 0.15;

fn corners(p: &Pose) -> (f64, f64, f64, f64) {
    let h = p.size / 2.0;
    (p.cx - h, p.cy - h, p.cx + h, p.cy + h)
}

/// Overlap ratio of two scripted squares.
pub fn square_iou(a: &Pose, b: &Pose) -> f64 {
    let (ax0, ay0, ax1, ay1) = corners(a);
    let (bx0, by0, bx1, by1) = corners(b);
    let w = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let h = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = w * h;
    let union = a.size * a.size + b.size * b.size - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Centre distance divided by the 512×512 keyframe diagonal.
pub fn normalized_center_distance(a: &Pose, b: &Pose) -> f64 {
    let (dx, dy) = (a.cx - b.cx, a.cy - b.cy);
    (dx * dx + dy * dy).sqrt() / (512.0 * 2f64.sqrt())
}

/// Reference label for a pair of deltas; thresholds are inclusive.
pub fn oracle_label(delta_iou: f64, delta_dist: f64) -> ContactLabel {
    let gain = delta_iou >= GAIN_LOSS_IOU && delta_dist <= -GAIN_LOSS_DIST;
    let loss = -delta_iou >= GAIN_LOSS_IOU && delta_dist >= GAIN_LOSS_DIST;
    if gain {
        ContactLabel::Gain
    } else if loss {
        ContactLabel::Loss
    } else {
        ContactLabel::Stable
    }
}

/// Reference transitions between consecutive entries of `frames`.
///
/// The first gripper actor is paired with the object actor whose centre is
/// closest at the earlier frame (lowest actor index on ties).
pub fn oracle_contacts(spec: &ScenarioSpec, frames: &[usize]) -> Vec<ContactTransition> {
    let gripper = spec.actors.iter().position(|a| a.is_gripper);
    let objects: Vec<usize> = (0..spec.actors.len()).filter(|&i| !spec.actors[i].is_gripper).collect();
    let mut out = Vec::new();
    for k in 0..frames.len().saturating_sub(1) {
        let Some(g) = gripper.filter(|_| !objects.is_empty()) else {
            out.push(ContactTransition {
                from_keyframe: k,
                to_keyframe: k + 1,
                label: ContactLabel::Stable,
                delta_iou: 0.0,
                delta_dist: 0.0,
                flag: Some(ContactFlag::NoPair),
            });
            continue;
        };
        let (f0, f1) = (frames[k], frames[k + 1]);
        let g0 = spec.actors[g].pose_at(f0);
        let g1 = spec.actors[g].pose_at(f1);
        let mut best = objects[0];
        let mut best_d = f64::INFINITY;
        for &o in &objects {
            let d = normalized_center_distance(&g0, &spec.actors[o].pose_at(f0));
            if d < best_d {
                best_d = d;
                best = o;
            }
        }
        let o0 = spec.actors[best].pose_at(f0);
        let o1 = spec.actors[best].pose_at(f1);
        let delta_iou = square_iou(&g1, &o1) - square_iou(&g0, &o0);
        let delta_dist = normalized_center_distance(&g1, &o1) - normalized_center_distance(&g0, &o0);
        out.push(ContactTransition {
            from_keyframe: k,
            to_keyframe: k + 1,
            label: oracle_label(delta_iou, delta_dist),
            delta_iou,
            delta_dist,
            flag: None,
        });
    }
    out
}

/// Every `(i, j, relation)` that holds for ordered pairs of 3-D centroids.
///
/// `left_of` compares x, `above` compares y (image rows grow downward) and
/// `in_front_of` compares depth; each needs a margin larger than `tol`.
pub fn oracle_relations(centroids: &[[f64; 3]], tol: f64) -> BTreeSet<(usize, usize, &'static str)> {
    let names = ["left_of", "above", "in_front_of"];
    let mut out = BTreeSet::new();
    for (i, a) in centroids.iter().enumerate() {
        for (j, b) in centroids.iter().enumerate() {
            if i == j {
                continue;
            }
            for axis in 0..3 {
                if b[axis] - a[axis] > tol {
                    out.insert((i, j, names[axis]));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(cx: f64, cy: f64, size: f64) -> Pose {
        Pose { cx, cy, size, rel_depth: 0.5 }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(square_iou(&pose(10.0, 10.0, 10.0), &pose(10.0, 10.0, 10.0)), 1.0);
        assert_eq!(square_iou(&pose(10.0, 10.0, 10.0), &pose(100.0, 10.0, 10.0)), 0.0);
        let half = square_iou(&pose(0.0, 0.0, 10.0), &pose(5.0, 0.0, 10.0));
        assert!((half - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn label_boundaries() {
        assert_eq!(oracle_label(0.1, -0.15), ContactLabel::Gain);
        assert_eq!(oracle_label(-0.1, 0.15), ContactLabel::Loss);
        assert_eq!(oracle_label(0.099, -0.5), ContactLabel::Stable);
        assert_eq!(oracle_label(0.5, 0.15), ContactLabel::Stable);
    }

    #[test]
    fn relations_are_antisymmetric() {
        let c = [[0.0, 0.0, 0.2], [1.0, -1.0, 0.2], [0.0, 0.0, 0.9]];
        let r = oracle_relations(&c, 0.05);
        assert!(r.contains(&(0, 1, "left_of")));
        assert!(r.contains(&(1, 0, "above")));
        assert!(r.contains(&(0, 2, "in_front_of")));
        assert!(!r.contains(&(0, 2, "left_of")));
        for &(i, j, n) in &r {
            assert!(!r.contains(&(j, i, n)));
        }
    }
}
