//! Relative-depth post-processing: quantile clamp, min-max normalization,
//! and per-box statistics.

use crate::geometry::BBox;
use crate::model::DepthStats;
use crate::raster::Plane;
use crate::scalar::Scalar;

/// Nearest-rank quantile: the value at 1-based rank `ceil(q·N)` in sorted order.
///
/// Returns `None` for an empty slice.
pub fn nearest_rank_quantile<S: Scalar>(values: &[S], q: f64) -> Option<S> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    // Guard against products like 0.8 * 10 landing a hair above an integer.
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut scratch = values.to_vec();
    let (_, v, _) = scratch.select_nth_unstable_by(rank - 1, |a, b| a.partial_cmp(b).expect("finite depth"));
    Some(*v)
}

/// Clamp values above the `clamp_quantile` quantile down to it, then min-max
/// normalize to `[0, 1]`. Constant rasters map to all `0.5`.
pub fn normalize_depth<S: Scalar>(raw: &Plane<S>, clamp_quantile: f64) -> Plane<S> {
    let Some(cap) = nearest_rank_quantile(&raw.data, clamp_quantile) else {
        return raw.clone();
    };
    let clamped: Vec<S> = raw.data.iter().map(|&v| v.min(cap)).collect();
    let lo = clamped.iter().copied().fold(S::infinity(), S::min);
    let hi = clamped.iter().copied().fold(S::neg_infinity(), S::max);
    let span = hi - lo;
    let data = if span > S::zero() {
        clamped.into_iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![S::lit(0.5); clamped.len()]
    };
    Plane { width: raw.width, height: raw.height, data }
}

/// Integer pixel ranges covered by `bbox`, clamped to the raster.
fn pixel_span(lo: f64, hi: f64, limit: usize) -> (usize, usize) {
    let start = (lo.floor().max(0.0) as usize).min(limit.saturating_sub(1));
    let end = (hi.ceil().max(0.0) as usize).min(limit).max(start + 1);
    (start, end)
}

/// Median and mean of the normalized depth inside `bbox`.
pub fn box_depth_stats(depth: &Plane<f64>, bbox: &BBox<f64>) -> DepthStats {
    let (x0, x1) = pixel_span(bbox.x_min, bbox.x_max, depth.width);
    let (y0, y1) = pixel_span(bbox.y_min, bbox.y_max, depth.height);
    let mut values: Vec<f64> = (y0..y1)
        .flat_map(|y| (x0..x1).map(move |x| (x, y)))
        .map(|(x, y)| depth.at(x, y))
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let median = if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 };
    DepthStats { median_rel_depth: median, mean_rel_depth: mean }
}
