//! 2-D convolution kernels (im2col + GEMM).

use crate::real::{gemm, MatRef};
use crate::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(stride >= 1, "stride must be positive");
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self { cin, h, w, k, stride, pad, ho, wo }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Valid output column range for kernel column `kx` (stride 1 only).
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.wo);
        (lo, hi.max(lo))
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let ncol = g.cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.ho {
                    let iy = (oy * s + ky) as isize - p;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if s == 1 {
                        let (lo, hi) = g.valid_ox(kx);
                        drow[..lo].fill(T::zero());
                        if hi > lo {
                            let ix0 = lo + kx - g.pad;
                            drow[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                        }
                        drow[hi..].fill(T::zero());
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let ncol = g.cols();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.ho {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if s == 1 {
                        let (lo, hi) = g.valid_ox(kx);
                        if hi > lo {
                            let ix0 = lo + kx - g.pad;
                            for (d, &v) in drow[ix0..ix0 + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                                *d += v;
                            }
                        }
                    } else {
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && (ix as usize) < g.w {
                                drow[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn weight_geom<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> (usize, usize, ConvGeom) {
    let (n, cin, h, w) = x.dims4();
    let (cout, wcin, kh, kw) = weight.dims4();
    assert_eq!(cin, wcin, "conv2d channel mismatch: input {cin}, weight {wcin}");
    assert_eq!(kh, kw, "only square kernels are supported");
    (n, cout, ConvGeom::new(cin, h, w, kh, stride, pad))
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, cout, g) = weight_geom(x, weight, stride, pad);
    if let Some(b) = bias {
        assert_eq!(b.len(), cout, "bias length mismatch");
    }
    let (rows, ncol) = (g.rows(), g.cols());
    let in_per = g.cin * g.h * g.w;
    let out_per = cout * ncol;
    let mut out = vec![T::zero(); n * out_per];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * ncol] };
    let wmat = MatRef::row_major(weight.data(), cout, rows);
    for b in 0..n {
        let xb = &x.data()[b * in_per..(b + 1) * in_per];
        let colref = if g.is_pointwise() {
            MatRef::row_major(xb, rows, ncol)
        } else {
            im2col(xb, &g, &mut cols);
            MatRef::row_major(&cols, rows, ncol)
        };
        let ob = &mut out[b * out_per..(b + 1) * out_per];
        gemm(T::one(), wmat, colref, T::zero(), ob);
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                for v in &mut ob[co * ncol..(co + 1) * ncol] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, g.ho, g.wo], out)
}

/// Gradients of a convolution. Each output is computed only when requested.
pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (n, cout, g) = weight_geom(x, weight, stride, pad);
    let (rows, ncol) = (g.rows(), g.cols());
    let in_per = g.cin * g.h * g.w;
    let out_per = cout * ncol;
    let (want_dx, want_dw, want_db) = want;

    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = want_dw.then(|| vec![T::zero(); weight.len()]);
    let db = want_db.then(|| {
        let mut db = vec![T::zero(); cout];
        for b in 0..n {
            let dyb = &dy.data()[b * out_per..(b + 1) * out_per];
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += dyb[co * ncol..(co + 1) * ncol].iter().copied().sum::<T>();
            }
        }
        Tensor::from_vec(&[cout], db)
    });

    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); rows * ncol] };
    let mut dcols = if want_dx && !pointwise { vec![T::zero(); rows * ncol] } else { Vec::new() };
    for b in 0..n {
        let dyb = MatRef::row_major(&dy.data()[b * out_per..(b + 1) * out_per], cout, ncol);
        if let Some(dw) = dw.as_mut() {
            let xb = &x.data()[b * in_per..(b + 1) * in_per];
            let cols_t = if pointwise {
                MatRef::transposed(xb, rows, ncol)
            } else {
                im2col(xb, &g, &mut cols);
                MatRef::transposed(&cols, rows, ncol)
            };
            gemm(T::one(), dyb, cols_t, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let wt = MatRef::transposed(weight.data(), cout, rows);
            let dxb = &mut dx[b * in_per..(b + 1) * in_per];
            if pointwise {
                gemm(T::one(), wt, dyb, T::one(), dxb);
            } else {
                gemm(T::one(), wt, dyb, T::zero(), &mut dcols);
                col2im(&dcols, &g, dxb);
            }
        }
    }
    ConvGrads {
        dx: dx.map(|d| Tensor::from_vec(x.shape(), d)),
        dw: dw.map(|d| Tensor::from_vec(weight.shape(), d)),
        db,
    }
}
