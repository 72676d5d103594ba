//! Affine warps on normalized `(y, x)` coordinates.
//!
//! A matrix maps an *output* location, normalized so pixel centres of an
//! `H x W` grid lie at `(2i + 1)/H - 1`, to the *input* location that is
//! sampled bilinearly. Samples falling outside the input read as zero.

use bkt_tensor::{Sampler, Tap};
use rand::Rng;

use crate::datamodel::{Image, Mask};
use crate::{Error, Result};

const MIN_DET: f64 = 1e-6;

/// Row-major `2 x 3` matrix `[[a, b, ty], [c, d, tx]]` acting on `(y, x, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    m: [[f64; 3]; 2],
}

/// Parameters of a sampled transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformParams {
    pub rotation_deg: f64,
    pub scale: f64,
    /// Translation as a fraction of the image side, `(y, x)`.
    pub translation: (f64, f64),
    pub flip: bool,
}

impl TransformParams {
    pub const IDENTITY: Self = Self { rotation_deg: 0.0, scale: 1.0, translation: (0.0, 0.0), flip: false };
}

/// Ranges of [`sample_transform`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformRanges {
    pub max_rotation_deg: f64,
    pub scale: (f64, f64),
    pub max_translation: f64,
    pub flip_probability: f64,
}

impl Default for TransformRanges {
    fn default() -> Self {
        Self { max_rotation_deg: 30.0, scale: (0.8, 1.25), max_translation: 0.1, flip_probability: 0.5 }
    }
}

impl AffineTransform {
    pub const IDENTITY: Self = Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] };

    pub fn new(m: [[f64; 3]; 2]) -> Result<Self> {
        let t = Self { m };
        if !m.iter().flatten().all(|v| v.is_finite()) || t.det().abs() <= MIN_DET {
            return Err(Error::DegenerateTransform(t.det()));
        }
        Ok(t)
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        self.m
    }

    /// Determinant of the linear part.
    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// `linear = scale * R(rotation) * F`, where `F = diag(1, -1)` mirrors
    /// the x axis when `flip` is set; translation `2 * t` in normalized units.
    pub fn from_params(p: &TransformParams) -> Result<Self> {
        let (s, c) = p.rotation_deg.to_radians().sin_cos();
        let f = if p.flip { -1.0 } else { 1.0 };
        let k = p.scale;
        Self::new([
            [k * c, -k * s * f, 2.0 * p.translation.0],
            [k * s, k * c * f, 2.0 * p.translation.1],
        ])
    }

    /// Moves content by `(dy, dx)` pixels on an `h x w` grid.
    pub fn shift_pixels(dy: f64, dx: f64, h: usize, w: usize) -> Self {
        Self { m: [[1.0, 0.0, -2.0 * dy / h as f64], [0.0, 1.0, -2.0 * dx / w as f64]] }
    }

    pub fn inverse(&self) -> Self {
        let [[a, b, ty], [c, d, tx]] = self.m;
        let det = self.det();
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Self { m: [[ia, ib, -(ia * ty + ib * tx)], [ic, id, -(ic * ty + id * tx)]] }
    }

    /// `self ∘ other`: applies `other`'s coordinate map first.
    pub fn compose(&self, other: &Self) -> Self {
        let [[a, b, ty], [c, d, tx]] = self.m;
        let [[a2, b2, ty2], [c2, d2, tx2]] = other.m;
        Self {
            m: [
                [a * a2 + b * c2, a * b2 + b * d2, a * ty2 + b * tx2 + ty],
                [c * a2 + d * c2, c * b2 + d * d2, c * ty2 + d * tx2 + tx],
            ],
        }
    }

    pub fn apply(&self, y: f64, x: f64) -> (f64, f64) {
        let [[a, b, ty], [c, d, tx]] = self.m;
        (a * y + b * x + ty, c * y + d * x + tx)
    }

    /// Bilinear resampling operator for an `h x w` grid.
    pub fn sampler(&self, h: usize, w: usize) -> Sampler {
        let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
        let mut taps = Vec::with_capacity(h * w);
        for i in 0..h {
            let yn = (2 * i + 1) as f64 / h as f64 - 1.0;
            for j in 0..w {
                let xn = (2 * j + 1) as f64 / w as f64 - 1.0;
                let (yi, xi) = self.apply(yn, xn);
                let py = snap(((yi + 1.0) * h as f64 - 1.0) / 2.0);
                let px = snap(((xi + 1.0) * w as f64 - 1.0) / 2.0);
                let (y0, x0) = (py.floor(), px.floor());
                let (fy, fx) = (py - y0, px - x0);
                let mut set = [Tap::NONE; 4];
                let corners = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x0 + 1.0, (1.0 - fy) * fx),
                    (y0 + 1.0, x0, fy * (1.0 - fx)),
                    (y0 + 1.0, x0 + 1.0, fy * fx),
                ];
                for (slot, (yy, xx, wt)) in set.iter_mut().zip(corners) {
                    if wt != 0.0 && yy >= 0.0 && xx >= 0.0 && yy < h as f64 && xx < w as f64 {
                        *slot = Tap { index: (yy as usize * w + xx as usize) as u32, weight: wt };
                    }
                }
                taps.push(set);
            }
        }
        Sampler::new(h, w, h, w, taps)
    }
}

fn apply_clamped(s: &Sampler, src: &[f64], dst: &mut [f64]) {
    s.apply_plane(src, dst);
    for v in dst.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Warps every channel of an image.
pub fn warp_image(x: &Image, a: &AffineTransform) -> Image {
    let s = a.sampler(x.height(), x.width());
    let hw = x.height() * x.width();
    let mut data = vec![0.0; x.data().len()];
    for c in 0..x.channels() {
        apply_clamped(&s, x.plane(c), &mut data[c * hw..(c + 1) * hw]);
    }
    Image::new(x.channels(), x.height(), x.width(), data).expect("warp preserves the value range")
}

/// Warps a mask bilinearly; the result is soft.
pub fn warp_mask(m: &Mask, a: &AffineTransform) -> Mask {
    let s = a.sampler(m.height(), m.width());
    let mut data = vec![0.0; m.data().len()];
    apply_clamped(&s, m.data(), &mut data);
    Mask::soft(m.height(), m.width(), data).expect("warp preserves the value range")
}

/// Fraction of each output pixel's bilinear footprint that lands inside the
/// input grid: the warp of an all-ones plane.
pub fn coverage(a: &AffineTransform, h: usize, w: usize) -> Mask {
    warp_mask(&Mask::filled(h, w, 1.0).expect("non-empty"), a)
}

/// Draws rotation, isotropic scale, translation and flip independently.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R, ranges: &TransformRanges) -> TransformParams {
    let rotation_deg = rng.random_range(-ranges.max_rotation_deg..=ranges.max_rotation_deg);
    let scale = rng.random_range(ranges.scale.0..=ranges.scale.1);
    let t = ranges.max_translation;
    let translation = (rng.random_range(-t..=t), rng.random_range(-t..=t));
    let flip = rng.random_bool(ranges.flip_probability);
    TransformParams { rotation_deg, scale, translation, flip }
}

pub fn sample_transform<R: Rng + ?Sized>(rng: &mut R, ranges: &TransformRanges) -> AffineTransform {
    AffineTransform::from_params(&sample_params(rng, ranges)).expect("sampled scale is bounded away from zero")
}
