//! Keyframe selection: temporal NMS over the saliency curve with uniform backfill.

use std::collections::BTreeMap;

use crate::model::SelectionReason;

/// A selected frame and why it was picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SelectedFrame {
    pub frame_index: usize,
    pub reason: SelectionReason,
}

/// `round(j·(T−1)/(M−1))` for `j = 0..M`; a single slot takes the middle frame.
pub fn uniform_grid(frame_count: usize, budget: usize) -> Vec<usize> {
    if frame_count == 0 || budget == 0 {
        return Vec::new();
    }
    let last = (frame_count - 1) as f64;
    if budget == 1 {
        return vec![(last / 2.0).round() as usize];
    }
    (0..budget)
        .map(|j| (j as f64 * last / (budget - 1) as f64).round() as usize)
        .collect()
}

/// Orders `a` before `b` when it scores higher, or ties at a lower frame.
fn dominates(a: (usize, f64), b: (usize, f64)) -> bool {
    a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)
}

/// Frames whose score dominates every other score within `window` frames.
/// `scores[t]` belongs to frame `t + 1`; zero-motion frames are never peaks.
pub fn motion_peaks(scores: &[f64], window: usize) -> Vec<(usize, f64)> {
    let n = scores.len();
    (0..n)
        .filter(|&t| scores[t] > 0.0)
        .filter(|&t| {
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(n - 1);
            (lo..=hi).filter(|&j| j != t).all(|j| dominates((t, scores[t]), (j, scores[j])))
        })
        .map(|t| (t + 1, scores[t]))
        .collect()
}

/// Greedy NMS over the candidate peaks, highest first, keeping at most `budget`.
fn suppress(mut candidates: Vec<(usize, f64)>, window: usize, budget: usize) -> Vec<usize> {
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<usize> = Vec::new();
    for (frame, _) in candidates {
        if kept.len() == budget {
            break;
        }
        if kept.iter().all(|&k| k.abs_diff(frame) > window) {
            kept.push(frame);
        }
    }
    kept
}

/// Fill `selected` up to `budget` frames: grid slots away from existing picks
/// first, then any unused grid slot, then the frame farthest from every pick.
fn backfill(selected: &mut BTreeMap<usize, SelectionReason>, frame_count: usize, budget: usize, window: usize) {
    let target = budget.min(frame_count);
    let grid = uniform_grid(frame_count, budget);

    for &g in &grid {
        if selected.len() >= target {
            return;
        }
        if selected.keys().all(|&s| s.abs_diff(g) > window) {
            selected.insert(g, SelectionReason::UniformBackfill);
        }
    }
    for &g in &grid {
        if selected.len() >= target {
            return;
        }
        selected.entry(g).or_insert(SelectionReason::UniformBackfill);
    }
    while selected.len() < target {
        let best = (0..frame_count)
            .filter(|f| !selected.contains_key(f))
            .max_by(|&a, &b| {
                let gap = |f: usize| selected.keys().map(|&s| s.abs_diff(f)).min().unwrap_or(usize::MAX);
                gap(a).cmp(&gap(b)).then(b.cmp(&a))
            })
            .expect("fewer selections than frames");
        selected.insert(best, SelectionReason::UniformBackfill);
    }
}

/// Motion-peak selection with uniform backfill. Output is ascending,
/// duplicate-free and exactly `min(budget, frame_count)` long.
pub fn select_from_scores(scores: &[f64], frame_count: usize, budget: usize, window: usize) -> Vec<SelectedFrame> {
    let peaks = suppress(motion_peaks(scores, window), window, budget);
    let mut selected: BTreeMap<usize, SelectionReason> =
        peaks.into_iter().map(|f| (f, SelectionReason::MotionPeak)).collect();
    backfill(&mut selected, frame_count, budget, window);
    selected
        .into_iter()
        .map(|(frame_index, reason)| SelectedFrame { frame_index, reason })
        .collect()
}

/// Pure uniform sampling, used by the ablation that ignores motion.
pub fn select_uniform(frame_count: usize, budget: usize) -> Vec<SelectedFrame> {
    let mut selected = BTreeMap::new();
    backfill(&mut selected, frame_count, budget, 0);
    selected
        .into_keys()
        .map(|frame_index| SelectedFrame { frame_index, reason: SelectionReason::UniformBackfill })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frames(sel: &[SelectedFrame]) -> Vec<usize> {
        sel.iter().map(|s| s.frame_index).collect()
    }

    #[test]
    fn budget_saturation() {
        let sel = select_from_scores(&[0.0, 1.0, 0.5, 0.0, 3.0, 0.0, 0.2], 8, 8, 5);
        assert_eq!(frames(&sel), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn two_peaks_with_unit_window() {
        let sel = select_from_scores(&[0.0, 5.0, 0.0, 0.0, 7.0, 0.0, 0.0], 8, 2, 1);
        assert_eq!(frames(&sel), vec![2, 5]);
        assert!(sel.iter().all(|s| s.reason == SelectionReason::MotionPeak));
    }

    #[test]
    fn single_peak_backfilled_from_grid() {
        let mut scores = vec![0.0; 29];
        scores[9] = 4.0; // frame 10
        let sel = select_from_scores(&scores, 30, 3, 2);
        assert_eq!(
            sel,
            vec![
                SelectedFrame { frame_index: 0, reason: SelectionReason::UniformBackfill },
                SelectedFrame { frame_index: 10, reason: SelectionReason::MotionPeak },
                SelectedFrame { frame_index: 15, reason: SelectionReason::UniformBackfill },
            ]
        );
    }

    #[test]
    fn plateau_tie_goes_to_lower_frame() {
        let sel = select_from_scores(&[0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 10, 1, 2);
        assert_eq!(sel, vec![SelectedFrame { frame_index: 2, reason: SelectionReason::MotionPeak }]);
    }

    #[test]
    fn boundary_peak_counts() {
        let sel = select_from_scores(&[0.0, 0.0, 0.0, 0.0, 9.0], 6, 1, 3);
        assert_eq!(frames(&sel), vec![5]);
    }

    #[test]
    fn static_curve_is_all_uniform() {
        let sel = select_from_scores(&[0.0; 29], 30, 3, 2);
        assert_eq!(frames(&sel), vec![0, 15, 29]);
        assert!(sel.iter().all(|s| s.reason == SelectionReason::UniformBackfill));
    }

    #[test]
    fn uniform_mode() {
        assert_eq!(frames(&select_uniform(120, 8)), vec![0, 17, 34, 51, 68, 85, 102, 119]);
        assert_eq!(frames(&select_uniform(3, 8)), vec![0, 1, 2]);
        assert_eq!(frames(&select_uniform(9, 1)), vec![4]);
    }

    proptest! {
        #[test]
        fn selection_invariants(
            scores in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..10.0, Just(3.0)], 1..120),
            budget in 1usize..12,
            window in 1usize..8,
        ) {
            let t = scores.len() + 1;
            let sel = select_from_scores(&scores, t, budget, window);
            let f = frames(&sel);
            prop_assert_eq!(f.len(), budget.min(t));
            prop_assert!(f.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(f.iter().all(|&i| i < t));
            let peaks: Vec<usize> = sel.iter().filter(|s| s.reason == SelectionReason::MotionPeak).map(|s| s.frame_index).collect();
            for (i, a) in peaks.iter().enumerate() {
                for b in &peaks[i + 1..] {
                    prop_assert!(a.abs_diff(*b) > window);
                }
                prop_assert!(scores[a - 1] > 0.0);
            }
            prop_assert_eq!(sel.clone(), select_from_scores(&scores, t, budget, window));
        }

        #[test]
        fn uniform_invariants(t in 1usize..2000, budget in 1usize..20) {
            let f = frames(&select_uniform(t, budget));
            prop_assert_eq!(f.len(), budget.min(t));
            prop_assert!(f.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
