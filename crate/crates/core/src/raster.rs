//! Single-channel floating point rasters.

use image::RgbImage;

use crate::scalar::Scalar;

/// Single-channel floating point raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<S> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Plane<S> {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![S::zero(); width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> S {
        self.data[y * self.width + x]
    }

    #[inline]
    pub(crate) fn at_clamped(&self, x: isize, y: isize) -> S {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.at(xc, yc)
    }

    /// Bilinear sample with border replication.
    pub fn sample(&self, x: S, y: S) -> S {
        let max_x = S::from_usize_lossy(self.width - 1);
        let max_y = S::from_usize_lossy(self.height - 1);
        let x = x.max(S::zero()).min(max_x);
        let y = y.max(S::zero()).min(max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0.to_usize().unwrap_or(0);
        let yi = y0.to_usize().unwrap_or(0);
        let x1 = (xi + 1).min(self.width - 1);
        let y1 = (yi + 1).min(self.height - 1);
        let top = self.at(xi, yi) * (S::one() - fx) + self.at(x1, yi) * fx;
        let bottom = self.at(xi, y1) * (S::one() - fx) + self.at(x1, y1) * fx;
        top * (S::one() - fy) + bottom * fy
    }

    /// Luma plane of an RGB image (BT.601 weights, 0..255 scale).
    pub fn luma(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let (kr, kg, kb) = (S::lit(0.299), S::lit(0.587), S::lit(0.114));
        Self::from_fn(w as usize, h as usize, |x, y| {
            let p = img.get_pixel(x as u32, y as u32);
            kr * S::lit(p[0] as f64) + kg * S::lit(p[1] as f64) + kb * S::lit(p[2] as f64)
        })
    }

    /// Area-averaging downscale so the longer side is at most `long_side`.
    pub fn downscaled(&self, long_side: usize) -> Self {
        let longest = self.width.max(self.height);
        if long_side == 0 || longest <= long_side {
            return self.clone();
        }
        let ratio = longest as f64 / long_side as f64;
        let nw = ((self.width as f64 / ratio).round() as usize).max(1);
        let nh = ((self.height as f64 / ratio).round() as usize).max(1);
        let sx = self.width as f64 / nw as f64;
        let sy = self.height as f64 / nh as f64;
        Self::from_fn(nw, nh, |x, y| {
            let x0 = (x as f64 * sx).floor() as usize;
            let x1 = (((x + 1) as f64 * sx).ceil() as usize).min(self.width).max(x0 + 1);
            let y0 = (y as f64 * sy).floor() as usize;
            let y1 = (((y + 1) as f64 * sy).ceil() as usize).min(self.height).max(y0 + 1);
            let mut acc = S::zero();
            for yy in y0..y1 {
                for xx in x0..x1 {
                    acc = acc + self.at(xx, yy);
                }
            }
            acc / S::from_usize_lossy((x1 - x0) * (y1 - y0))
        })
    }

    pub(crate) fn convolve_separable(&self, kernel: &[S]) -> Self {
        let r = (kernel.len() / 2) as isize;
        let horiz = Self::from_fn(self.width, self.height, |x, y| {
            kernel.iter().enumerate().fold(S::zero(), |acc, (k, &w)| {
                acc + w * self.at_clamped(x as isize + k as isize - r, y as isize)
            })
        });
        Self::from_fn(self.width, self.height, |x, y| {
            kernel.iter().enumerate().fold(S::zero(), |acc, (k, &w)| {
                acc + w * horiz.at_clamped(x as isize, y as isize + k as isize - r)
            })
        })
    }

    /// Blur and halve; odd sizes round up.
    pub(crate) fn pyr_down(&self) -> Self {
        let blurred = self.convolve_separable(&gaussian_kernel(1.0, 2));
        let nw = self.width.div_ceil(2);
        let nh = self.height.div_ceil(2);
        Self::from_fn(nw, nh, |x, y| blurred.at((2 * x).min(self.width - 1), (2 * y).min(self.height - 1)))
    }

    /// Mean over a `(2r+1)²` box with border replication, via running sums.
    pub(crate) fn box_filter(&self, r: usize) -> Self {
        let r = r as isize;
        let norm = S::one() / S::from_usize_lossy(((2 * r + 1) * (2 * r + 1)) as usize);
        let mut horiz = Self::new(self.width, self.height);
        for y in 0..self.height {
            let mut acc = S::zero();
            for k in -r..=r {
                acc = acc + self.at_clamped(k, y as isize);
            }
            for x in 0..self.width {
                horiz.data[y * self.width + x] = acc;
                let xi = x as isize;
                acc = acc + self.at_clamped(xi + r + 1, y as isize) - self.at_clamped(xi - r, y as isize);
            }
        }
        let mut out = Self::new(self.width, self.height);
        for x in 0..self.width {
            let mut acc = S::zero();
            for k in -r..=r {
                acc = acc + horiz.at_clamped(x as isize, k);
            }
            for y in 0..self.height {
                out.data[y * self.width + x] = acc * norm;
                let yi = y as isize;
                acc = acc + horiz.at_clamped(x as isize, yi + r + 1) - horiz.at_clamped(x as isize, yi - r);
            }
        }
        out
    }
}

pub(crate) fn gaussian_kernel<S: Scalar>(sigma: f64, radius: usize) -> Vec<S> {
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| S::lit(v / sum)).collect()
}

/// Encode an RGB image as PNG bytes.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}
