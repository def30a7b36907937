//! Axis-aligned boxes in keyframe pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Side length of the square keyframe raster every perception stage works in.
pub const KEYFRAME_SIZE: u32 = 512;

/// Axis-aligned rectangle `(x_min, y_min, x_max, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct BBox<S> {
    pub x_min: S,
    pub y_min: S,
    pub x_max: S,
    pub y_max: S,
}

impl<S: Scalar> BBox<S> {
    pub fn new(x_min: S, y_min: S, x_max: S, y_max: S) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    /// Square box of side `size` centred at `(cx, cy)`.
    pub fn centered(cx: S, cy: S, size: S) -> Self {
        let h = size / S::lit(2.0);
        Self::new(cx - h, cy - h, cx + h, cy + h)
    }

    pub fn width(&self) -> S {
        (self.x_max - self.x_min).max(S::zero())
    }

    pub fn height(&self) -> S {
        (self.y_max - self.y_min).max(S::zero())
    }

    pub fn area(&self) -> S {
        self.width() * self.height()
    }

    pub fn center(&self) -> (S, S) {
        let two = S::lit(2.0);
        ((self.x_min + self.x_max) / two, (self.y_min + self.y_max) / two)
    }

    /// Non-degenerate and finite.
    pub fn is_proper(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn intersection_area(&self, other: &Self) -> S {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        w.max(S::zero()) * h.max(S::zero())
    }

    /// Intersection over union; zero when both boxes are empty.
    pub fn iou(&self, other: &Self) -> S {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union > S::zero() {
            inter / union
        } else {
            S::zero()
        }
    }

    /// Euclidean distance between box centres.
    pub fn center_distance(&self, other: &Self) -> S {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    /// Clip to `[0, limit]` on both axes.
    pub fn clipped(&self, limit: S) -> Self {
        let c = |v: S| v.max(S::zero()).min(limit);
        Self::new(c(self.x_min), c(self.y_min), c(self.x_max), c(self.y_max))
    }

    pub fn scaled(&self, factor: S) -> Self {
        Self::new(
            self.x_min * factor,
            self.y_min * factor,
            self.x_max * factor,
            self.y_max * factor,
        )
    }

    pub fn within(&self, limit: S) -> bool {
        self.x_min >= S::zero()
            && self.y_min >= S::zero()
            && self.x_max <= limit
            && self.y_max <= limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_partial_overlap() {
        let a = BBox::new(0.0f64, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 5.0, 15.0, 15.0);
        assert!((a.iou(&b) - 25.0 / 175.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
    }

    #[test]
    fn clip_to_keyframe() {
        let b = BBox::new(-10.0_f32, 0.0, 300.0, 520.0).clipped(512.0);
        assert_eq!(b, BBox::new(0.0, 0.0, 300.0, 512.0));
    }

    #[test]
    fn iou_is_scale_invariant() {
        let a = BBox::new(3.0f64, 4.0, 40.0, 50.0);
        let b = BBox::new(10.0, 20.0, 60.0, 55.0);
        let s = 2.5;
        assert!((a.iou(&b) - a.scaled(s).iou(&b.scaled(s))).abs() < 1e-12);
    }
}
