//! Dense optical flow by polynomial expansion (Farnebäck, 2003).
//!
//! Each pixel neighbourhood is fitted with a quadratic
//! `f(x) ≈ xᵀAx + bᵀx + c` by weighted least squares. A displacement `d`
//! between two frames shows up as `b₂ = b₁ − 2Ad`; the per-pixel constraints are
//! pooled over a window and solved coarse-to-fine on an image pyramid.

use serde::{Deserialize, Serialize};

use crate::raster::Plane;
use crate::scalar::Scalar;

/// Per-pixel displacement field in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<S> {
    pub width: usize,
    pub height: usize,
    pub u: Vec<S>,
    pub v: Vec<S>,
}

impl<S: Scalar> FlowField<S> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, u: vec![S::zero(); width * height], v: vec![S::zero(); width * height] }
    }

    pub fn constant(width: usize, height: usize, u: S, v: S) -> Self {
        Self { width, height, u: vec![u; width * height], v: vec![v; width * height] }
    }

    pub fn mean_u(&self) -> S {
        mean(&self.u)
    }

    pub fn mean_v(&self) -> S {
        mean(&self.v)
    }

    fn upsampled(&self, width: usize, height: usize) -> Self {
        let two = S::lit(2.0);
        let u = Plane { width: self.width, height: self.height, data: self.u.clone() };
        let v = Plane { width: self.width, height: self.height, data: self.v.clone() };
        let sx = S::lit(self.width as f64 / width as f64);
        let sy = S::lit(self.height as f64 / height as f64);
        let mut out = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let cx = (S::from_usize_lossy(x) + S::lit(0.5)) * sx - S::lit(0.5);
                let cy = (S::from_usize_lossy(y) + S::lit(0.5)) * sy - S::lit(0.5);
                out.u[y * width + x] = u.sample(cx, cy) * two;
                out.v[y * width + x] = v.sample(cx, cy) * two;
            }
        }
        out
    }
}

fn mean<S: Scalar>(values: &[S]) -> S {
    if values.is_empty() {
        return S::zero();
    }
    values.iter().fold(S::zero(), |a, &b| a + b) / S::from_usize_lossy(values.len())
}

/// Arithmetic mean of `sqrt(u² + v²)` over all pixels; zero for an empty field.
pub fn mean_flow_magnitude<S: Scalar>(f: &FlowField<S>) -> S {
    if f.u.is_empty() {
        return S::zero();
    }
    let total = f
        .u
        .iter()
        .zip(&f.v)
        .fold(S::zero(), |acc, (&u, &v)| acc + (u * u + v * v).sqrt());
    total / S::from_usize_lossy(f.u.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FarnebackParams {
    pub pyramid_levels: usize,
    /// Side of the square averaging window used to pool the per-pixel constraints.
    pub window_size: usize,
    pub iterations: usize,
    /// Side of the polynomial-fit neighbourhood (odd).
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        Self { pyramid_levels: 3, window_size: 13, iterations: 3, poly_n: 5, poly_sigma: 1.1 }
    }
}

/// Quadratic fit coefficients per pixel: `A = [[a11, a12], [a12, a22]]`, `b = (b1, b2)`.
struct PolyExpansion<S> {
    width: usize,
    height: usize,
    b1: Plane<S>,
    b2: Plane<S>,
    a11: Plane<S>,
    a22: Plane<S>,
    a12: Plane<S>,
}

/// Least-squares projection from a neighbourhood to the six basis coefficients
/// `[1, x, y, x², y², xy]`, precomputed once per parameter set.
struct PolyBasis<S> {
    radius: isize,
    /// `rows[i][k]`: weight of neighbour `k` in coefficient `i`.
    rows: [Vec<S>; 6],
}

impl<S: Scalar> PolyBasis<S> {
    fn new(poly_n: usize, sigma: f64) -> Self {
        let radius = (poly_n / 2).max(1) as isize;
        let offsets: Vec<(f64, f64)> = (-radius..=radius)
            .flat_map(|dy| (-radius..=radius).map(move |dx| (dx as f64, dy as f64)))
            .collect();
        let basis = |(x, y): (f64, f64)| [1.0, x, y, x * x, y * y, x * y];
        let weight = |(x, y): (f64, f64)| (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();

        let mut normal = [[0.0f64; 6]; 6];
        for &o in &offsets {
            let b = basis(o);
            let w = weight(o);
            for i in 0..6 {
                for j in 0..6 {
                    normal[i][j] += w * b[i] * b[j];
                }
            }
        }
        let inv = invert6(normal);
        let rows = std::array::from_fn(|i| {
            offsets
                .iter()
                .map(|&o| {
                    let b = basis(o);
                    let w = weight(o);
                    S::lit((0..6).map(|j| inv[i][j] * b[j]).sum::<f64>() * w)
                })
                .collect()
        });
        Self { radius, rows }
    }

    fn expand(&self, img: &Plane<S>) -> PolyExpansion<S> {
        let (w, h) = (img.width, img.height);
        let mut coeffs: [Plane<S>; 6] = std::array::from_fn(|_| Plane::new(w, h));
        let r = self.radius;
        let mut patch = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        for y in 0..h {
            for x in 0..w {
                patch.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        patch.push(img.at_clamped(x as isize + dx, y as isize + dy));
                    }
                }
                for (plane, row) in coeffs.iter_mut().zip(&self.rows) {
                    plane.data[y * w + x] = row.iter().zip(&patch).fold(S::zero(), |a, (&c, &p)| a + c * p);
                }
            }
        }
        let [_, b1, b2, a11, a22, axy] = coeffs;
        let half = S::lit(0.5);
        let a12 = Plane { width: w, height: h, data: axy.data.into_iter().map(|v| v * half).collect() };
        PolyExpansion { width: w, height: h, b1, b2, a11, a22, a12 }
    }
}

fn invert6(m: [[f64; 6]; 6]) -> [[f64; 6]; 6] {
    let mut a = m;
    let mut inv = [[0.0; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..6 {
        let pivot = (col..6)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-12, "polynomial basis normal matrix is singular");
        for j in 0..6 {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..6 {
            if i != col {
                let f = a[i][col];
                if f != 0.0 {
                    for j in 0..6 {
                        a[i][j] -= f * a[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}

/// One refinement pass: pool `AᵀA` and `AᵀΔb` over the window and solve for `d`.
fn refine<S: Scalar>(
    p1: &PolyExpansion<S>,
    p2: &PolyExpansion<S>,
    flow: &FlowField<S>,
    window_radius: usize,
) -> FlowField<S> {
    let (w, h) = (p1.width, p1.height);
    let half = S::lit(0.5);
    let mut g11 = Plane::new(w, h);
    let mut g12 = Plane::new(w, h);
    let mut g22 = Plane::new(w, h);
    let mut h1 = Plane::new(w, h);
    let mut h2 = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (du, dv) = (flow.u[i], flow.v[i]);
            let sx = S::from_usize_lossy(x) + du;
            let sy = S::from_usize_lossy(y) + dv;
            let a11 = (p1.a11.data[i] + p2.a11.sample(sx, sy)) * half;
            let a12 = (p1.a12.data[i] + p2.a12.sample(sx, sy)) * half;
            let a22 = (p1.a22.data[i] + p2.a22.sample(sx, sy)) * half;
            let db1 = -(p2.b1.sample(sx, sy) - p1.b1.data[i]) * half + a11 * du + a12 * dv;
            let db2 = -(p2.b2.sample(sx, sy) - p1.b2.data[i]) * half + a12 * du + a22 * dv;
            g11.data[i] = a11 * a11 + a12 * a12;
            g12.data[i] = a11 * a12 + a12 * a22;
            g22.data[i] = a12 * a12 + a22 * a22;
            h1.data[i] = a11 * db1 + a12 * db2;
            h2.data[i] = a12 * db1 + a22 * db2;
        }
    }
    let [g11, g12, g22, h1, h2] = [g11, g12, g22, h1, h2].map(|p| p.box_filter(window_radius));
    let eps = S::lit(1e-3);
    let mut out = FlowField::zeros(w, h);
    for i in 0..w * h {
        let det = g11.data[i] * g22.data[i] - g12.data[i] * g12.data[i] + eps;
        out.u[i] = (g22.data[i] * h1.data[i] - g12.data[i] * h2.data[i]) / det;
        out.v[i] = (g11.data[i] * h2.data[i] - g12.data[i] * h1.data[i]) / det;
    }
    out
}

fn build_pyramid<S: Scalar>(base: &Plane<S>, levels: usize) -> Vec<Plane<S>> {
    let mut pyr = vec![base.clone()];
    while pyr.len() < levels.max(1) {
        let last = pyr.last().expect("non-empty pyramid");
        if last.width < 16 || last.height < 16 {
            break;
        }
        let next = last.pyr_down();
        pyr.push(next);
    }
    pyr
}

/// Dense flow from `prev` to `next` (same dimensions), coarse to fine.
pub fn farneback<S: Scalar>(prev: &Plane<S>, next: &Plane<S>, params: &FarnebackParams) -> FlowField<S> {
    assert_eq!((prev.width, prev.height), (next.width, next.height), "plane dimensions differ");
    if prev.data == next.data {
        return FlowField::zeros(prev.width, prev.height);
    }
    let basis = PolyBasis::new(params.poly_n, params.poly_sigma);
    let pyr1 = build_pyramid(prev, params.pyramid_levels);
    let pyr2 = build_pyramid(next, params.pyramid_levels);
    let window_radius = params.window_size / 2;

    let mut flow: Option<FlowField<S>> = None;
    for (l1, l2) in pyr1.iter().zip(&pyr2).rev() {
        let p1 = basis.expand(l1);
        let p2 = basis.expand(l2);
        let mut f = match flow.take() {
            None => FlowField::zeros(l1.width, l1.height),
            Some(coarse) => coarse.upsampled(l1.width, l1.height),
        };
        for _ in 0..params.iterations.max(1) {
            f = refine(&p1, &p2, &f, window_radius);
        }
        flow = Some(f);
    }
    flow.expect("at least one pyramid level")
}
