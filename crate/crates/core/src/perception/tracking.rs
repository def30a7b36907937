use std::collections::BTreeMap;

use crate::model::{DetectionSet, Track, TrackSet};

/// Minimum box IoU for two detections in consecutive keyframes to share a track.
pub const LINK_IOU_FLOOR: f64 = 0.3;

struct Candidate {
    prev: usize,
    next: usize,
    iou: f64,
    conf_product: f64,
    prev_id: u32,
}

/// Greedily link detections between consecutive keyframes and stamp each
/// detection with its `instance_id`.
///
/// Only same-class pairs with IoU at or above [`LINK_IOU_FLOOR`] are
/// considered. Pairs are accepted by descending IoU, then descending
/// confidence product, then ascending instance id of the earlier detection.
/// Unmatched detections open new tracks; ids are handed out in order of first
/// appearance, starting at 1.
pub fn link_tracks(per_keyframe: &mut [DetectionSet]) -> TrackSet {
    let mut tracks: Vec<Track> = Vec::new();
    let open = |tracks: &mut Vec<Track>, class: &str, k: usize, i: usize| -> u32 {
        let id = tracks.len() as u32 + 1;
        tracks.push(Track { instance_id: id, class_label: class.to_string(), observations: BTreeMap::from([(k, i)]) });
        id
    };

    for k in 0..per_keyframe.len() {
        let mut assigned: Vec<Option<u32>> = vec![None; per_keyframe[k].len()];
        if k > 0 {
            let (before, after) = per_keyframe.split_at(k);
            let (prev, next) = (&before[k - 1], &after[0]);
            let mut cands = Vec::new();
            for (p, a) in prev.iter().enumerate() {
                for (n, b) in next.iter().enumerate() {
                    if a.class_label != b.class_label {
                        continue;
                    }
                    let iou = a.bbox.iou(&b.bbox);
                    if iou >= LINK_IOU_FLOOR {
                        cands.push(Candidate {
                            prev: p,
                            next: n,
                            iou,
                            conf_product: a.confidence * b.confidence,
                            prev_id: a.instance_id.expect("earlier keyframe already linked"),
                        });
                    }
                }
            }
            cands.sort_by(|x, y| {
                y.iou
                    .total_cmp(&x.iou)
                    .then(y.conf_product.total_cmp(&x.conf_product))
                    .then(x.prev_id.cmp(&y.prev_id))
                    .then(x.next.cmp(&y.next))
            });
            let mut prev_used = vec![false; prev.len()];
            for c in cands {
                if prev_used[c.prev] || assigned[c.next].is_some() {
                    continue;
                }
                prev_used[c.prev] = true;
                assigned[c.next] = Some(c.prev_id);
            }
        }
        for (i, det) in per_keyframe[k].iter_mut().enumerate() {
            let id = match assigned[i] {
                Some(id) => {
                    tracks[id as usize - 1].observations.insert(k, i);
                    id
                }
                None => open(&mut tracks, &det.class_label, k, i),
            };
            det.instance_id = Some(id);
        }
    }
    TrackSet { tracks }
}
