//! Real, fake, pseudo and interpolated critic inputs.
//!
//! A triplet `[image, mask, mask * image]` is fed to a critic as one
//! `(2C + 1)`-channel raster. The outer side uses the foreground mask, the
//! inner side its complement.

use bkt_tensor::{Graph, Real, Tensor, Var};

use crate::datamodel::{complement, Image, InnerPseudo, Mask, Side, Triplet, TripletKind};
use crate::morphology::{dilate, erode};
use crate::{Error, Result};

/// `[x̄, m̃, m̃ x̄]` from a target image and its (soft) prediction.
pub fn fake_outer(x: &Image, pred: &Mask) -> Result<Triplet> {
    Triplet::compose(x.clone(), pred.clone(), Side::Outer, TripletKind::Fake)
}

/// `[x̲, m, m x̲]` from a source sample.
pub fn real_outer(x: &Image, m: &Mask) -> Result<Triplet> {
    if !m.is_hard() {
        return Err(Error::SoftMask);
    }
    Triplet::compose(x.clone(), m.clone(), Side::Outer, TripletKind::Real)
}

/// Foreground grown by a disk of radius `r`, so it leaks background.
pub fn pseudo_outer(x: &Image, m: &Mask, r: usize) -> Result<Triplet> {
    Triplet::compose(x.clone(), dilate(m, r)?, Side::Outer, TripletKind::Pseudo)
}

pub fn fake_inner(x: &Image, pred: &Mask) -> Result<Triplet> {
    Triplet::compose(x.clone(), complement(pred), Side::Inner, TripletKind::Fake)
}

pub fn real_inner(x: &Image, m: &Mask) -> Result<Triplet> {
    if !m.is_hard() {
        return Err(Error::SoftMask);
    }
    Triplet::compose(x.clone(), complement(m), Side::Inner, TripletKind::Real)
}

/// Background mask `1 - m` corrupted by `variant`: dilation (the default)
/// makes it leak object pixels.
pub fn pseudo_inner(x: &Image, m: &Mask, r: usize, variant: InnerPseudo) -> Result<Triplet> {
    if !m.is_hard() {
        return Err(Error::SoftMask);
    }
    let bg = complement(m);
    let mask = match variant {
        InnerPseudo::Dilate => dilate(&bg, r)?,
        InnerPseudo::Erode => erode(&bg, r)?,
    };
    Triplet::compose(x.clone(), mask, Side::Inner, TripletKind::Pseudo)
}

fn mix(e: &[f64], a: &[f64], eps: f64) -> Vec<f64> {
    e.iter().zip(a).map(|(&e, &a)| eps * e + (1.0 - eps) * a).collect()
}

/// `ε e + (1 - ε) a`, component by component.
pub fn interpolate(e: &Triplet, a: &Triplet, eps: f64) -> Result<Triplet> {
    if e.side != a.side {
        return Err(Error::SideMismatch { expected: e.side, got: a.side });
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidValue(format!("interpolation weight {eps} outside [0, 1]")));
    }
    let (ei, ai) = (&e.image, &a.image);
    if (ei.channels(), ei.height(), ei.width()) != (ai.channels(), ai.height(), ai.width()) {
        return Err(Error::DimensionMismatch("interpolated triplets differ in shape".into()));
    }
    let (c, h, w) = (ei.channels(), ei.height(), ei.width());
    // Endpoints are returned verbatim so ε ∈ {0, 1} is exact.
    let pick = |ev: &[f64], av: &[f64]| -> Vec<f64> {
        if eps == 1.0 {
            ev.to_vec()
        } else if eps == 0.0 {
            av.to_vec()
        } else {
            mix(ev, av, eps).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
        }
    };
    Ok(Triplet {
        image: Image::new(c, h, w, pick(ei.data(), ai.data()))?,
        mask: Mask::soft(h, w, pick(e.mask.data(), a.mask.data()))?,
        masked_image: Image::new(c, h, w, pick(e.masked_image.data(), a.masked_image.data()))?,
        side: e.side,
        kind: TripletKind::Interpolated,
    })
}

/// Critic input for a batch: `[x, m, m * x]` with `x: [n, c, h, w]` and
/// `m: [n, 1, h, w]`.
pub fn encode<T: Real>(g: &mut Graph<T>, x: Var, m: Var) -> Var {
    let xm = g.mul_channels(x, m);
    g.cat_channels(&[x, m, xm])
}

/// Non-differentiable counterpart of [`encode`].
pub fn encode_tensor<T: Real>(x: &Tensor<T>, m: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert_eq!(m.shape(), &[n, 1, h, w], "mask batch shape");
    let hw = h * w;
    let mut xm = Vec::with_capacity(x.len());
    for b in 0..n {
        let mp = &m.data()[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let xp = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            xm.extend(xp.iter().zip(mp).map(|(&a, &b)| a * b));
        }
    }
    let xm = Tensor::from_vec(&[n, c, h, w], xm);
    Tensor::cat_channels(&[x, m, &xm])
}

/// Per-item convex combination `ε_k e_k + (1 - ε_k) a_k` of two batches.
pub fn interpolate_batch<T: Real>(e: &Tensor<T>, a: &Tensor<T>, eps: &[f64]) -> Tensor<T> {
    assert_eq!(e.shape(), a.shape(), "interpolation shapes");
    let n = e.shape()[0];
    assert_eq!(eps.len(), n, "one weight per batch item");
    let per = e.len() / n.max(1);
    let mut out = Vec::with_capacity(e.len());
    for (k, &t) in eps.iter().enumerate() {
        let t = T::from_f64c(t);
        let range = k * per..(k + 1) * per;
        out.extend(e.data()[range.clone()].iter().zip(&a.data()[range]).map(|(&e, &a)| t * e + (T::one() - t) * a));
    }
    Tensor::from_vec(e.shape(), out)
}

/// Decodes a `(2C + 1)`-channel encoding back into its three parts.
pub fn split_encoding(data: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hw = h * w;
    assert_eq!(data.len(), (2 * channels + 1) * hw, "encoding size");
    let (img, rest) = data.split_at(channels * hw);
    let (mask, xm) = rest.split_at(hw);
    (img.to_vec(), mask.to_vec(), xm.to_vec())
}
