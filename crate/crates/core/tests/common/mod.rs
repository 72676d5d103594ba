//! Independent oracles shared by the integration suites and the acceptance
//! harness. Nothing here calls into the code it checks.
#![allow(dead_code)]

pub mod checks;

use bkt_core::datamodel::Mask;
use bkt_core::metrics::Scores;
use bkt_core::networks::Segmenter;
use bkt_tensor::{Graph, ParamSet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent per-pixel coin flips with foreground probability `density`.
pub fn random_bits(rng: &mut impl Rng, h: usize, w: usize, density: f64) -> Vec<bool> {
    (0..h * w).map(|_| rng.random_bool(density)).collect()
}

/// Union of a few random disks with salt-and-pepper noise, so morphology
/// sees both large boundaries and isolated pixels.
pub fn blobby_bits(rng: &mut impl Rng, h: usize, w: usize) -> Vec<bool> {
    let n = rng.random_range(1..6);
    let blobs: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64), rng.random_range(1.0..h as f64 / 3.0)))
        .collect();
    let noise = rng.random_range(0.0..0.1);
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let inside = blobs.iter().any(|&(cy, cx, r)| (y - cy).powi(2) + (x - cx).powi(2) <= r * r);
            inside ^ rng.random_bool(noise)
        })
        .collect()
}

fn at(bits: &[bool], h: usize, w: usize, y: i64, x: i64) -> bool {
    y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && bits[y as usize * w + x as usize]
}

/// Per-pixel scan of the closed disk; outside the grid is background.
pub fn oracle_dilate(bits: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let r = r as i64;
    let mut out = vec![false; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut hit = false;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dy * dy + dx * dx <= r * r && at(bits, h, w, y + dy, x + dx) {
                        hit = true;
                    }
                }
            }
            out[y as usize * w + x as usize] = hit;
        }
    }
    out
}

pub fn oracle_erode(bits: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let r = r as i64;
    let mut out = vec![false; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut all = true;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dy * dy + dx * dx <= r * r && !at(bits, h, w, y + dy, x + dx) {
                        all = false;
                    }
                }
            }
            out[y as usize * w + x as usize] = all;
        }
    }
    out
}

pub fn oracle_weight(bits: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let d = oracle_dilate(bits, h, w, r);
    let e = oracle_erode(bits, h, w, r);
    d.iter().zip(&e).map(|(a, b)| *a && !*b).collect()
}

pub fn mask(bits: &[bool], h: usize, w: usize) -> Mask {
    Mask::from_bits(h, w, bits).unwrap()
}

pub fn bits_of(m: &Mask) -> Vec<bool> {
    m.data().iter().map(|&v| v == 1.0).collect()
}

/// Scores recounted pixel by pixel from `(pred >= 0.5, gt == 1)` pairs with
/// the zero-ground-truth class skipped.
pub fn oracle_scores(pairs: &[(&Mask, &Mask)]) -> Scores {
    let (mut tp, mut tn, mut fp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
    for (pred, gt) in pairs {
        for (p, g) in pred.data().iter().zip(gt.data()) {
            match (*p >= 0.5, *g == 1.0) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
            }
        }
    }
    let n = (tp + tn + fp + fneg) as f64;
    let mut classes = Vec::new();
    // (correct, gt count, union)
    if tn + fp > 0 {
        classes.push((tn as f64, (tn + fp) as f64, (tn + fp + fneg) as f64));
    }
    if tp + fneg > 0 {
        classes.push((tp as f64, (tp + fneg) as f64, (tp + fneg + fp) as f64));
    }
    let k = classes.len() as f64;
    Scores {
        pa: (tp + tn) as f64 / n,
        mpa: classes.iter().map(|c| c.0 / c.1).sum::<f64>() / k,
        miou: classes.iter().map(|c| c.0 / c.2).sum::<f64>() / k,
        fwiou: classes.iter().map(|c| c.1 / n * c.0 / c.2).sum(),
    }
}

/// Two-layer segmenter for gradient checks: 3×3 conv to 2 channels,
/// sigmoid, 1×1 conv to one channel, sigmoid.
pub struct TinyNet<'a> {
    pub vars: &'a [Var],
}

impl Segmenter<f64> for TinyNet<'_> {
    fn forward(&self, g: &mut Graph<f64>, x: Var) -> Var {
        let h = g.conv2d(x, self.vars[0], Some(self.vars[1]), 1, 1);
        let h = g.sigmoid(h);
        let o = g.conv2d(h, self.vars[2], Some(self.vars[3]), 1, 0);
        g.sigmoid(o)
    }
}

pub fn tiny_params(rng: &mut impl Rng, channels: usize) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    let mut u = |shape: &[usize], scale: f64| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
    };
    p.push("c1.w", u(&[2, channels, 3, 3], 1.5));
    p.push("c1.b", u(&[2], 0.5));
    p.push("c2.w", u(&[1, 2, 1, 1], 3.0));
    p.push("c2.b", u(&[1], 0.5));
    p
}

/// Largest relative error between `analytic` and central differences of `f`
/// over `coords` flat parameter indices.
pub fn max_fd_error(
    params: &ParamSet<f64>,
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&ParamSet<f64>) -> f64,
) -> (f64, usize) {
    let mut worst = (0.0, usize::MAX);
    for &i in coords {
        let mut p = params.clone();
        *p.flat_mut(i) += h;
        let up = f(&p);
        *p.flat_mut(i) -= 2.0 * h;
        let down = f(&p);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
        if err > worst.0 || worst.1 == usize::MAX {
            worst = (err, i);
        }
    }
    worst
}

pub fn flat(grads: &[Tensor<f64>]) -> Vec<f64> {
    grads.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Distinct coordinates, as many as `count` allows.
pub fn random_coords(rng: &mut impl Rng, n: usize, count: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, count.min(n)).into_vec()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect())
}

/// Segmenter that ignores its weights: it returns `plain` for the unwarped
/// batch and `warped` (the same masks pushed through the transforms) for
/// anything else, so it is equivariant by construction.
pub struct EquivariantOracle {
    pub plain_input: Tensor<f64>,
    pub plain: Tensor<f64>,
    pub warped: Tensor<f64>,
}

impl Segmenter<f64> for EquivariantOracle {
    fn forward(&self, g: &mut Graph<f64>, x: Var) -> Var {
        if g.value(x).data() == self.plain_input.data() {
            g.constant(self.plain.clone())
        } else {
            g.constant(self.warped.clone())
        }
    }
}

/// Soft disk masks with a one-pixel logistic edge.
pub fn soft_disks(n: usize, side: usize, centres: &[(f64, f64, f64)]) -> Tensor<f64> {
    let mut data = Vec::with_capacity(n * side * side);
    for &(cy, cx, r) in centres.iter().cycle().take(n) {
        for y in 0..side {
            for x in 0..side {
                let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
                data.push(1.0 / (1.0 + (d - r).exp()));
            }
        }
    }
    Tensor::from_vec(&[n, 1, side, side], data)
}
