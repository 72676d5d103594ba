//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation eagerly: values are computed when an
//! op is added, and [`Graph::backward`] walks the tape in reverse to
//! accumulate gradients for every node that (transitively) depends on a leaf
//! created with `requires_grad = true`.
//!
//! Shape errors are programming errors and panic.

use std::sync::Arc;

use crate::conv::{conv2d_backward, conv2d_forward};
use crate::{Real, Sampler, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[n, c, h, w] * [n, 1, h, w]`, broadcasting over channels.
    MulChannels { x: Var, m: Var },
    Affine { a: Var, scale: T },
    LeakyRelu { a: Var, slope: T },
    Sigmoid(Var),
    MaxPool2 { a: Var, argmax: Vec<u32> },
    Upsample2(Var),
    CatChannels(Vec<Var>),
    Sum(Var),
    Mean(Var),
    GlobalAvgPool(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Resample { a: Var, samplers: Arc<[Sampler]> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// An eagerly evaluated computation tape.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`]. Only leaf
/// gradients are retained.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` was on a gradient path.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Removes and returns the gradient for `v`.
    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let value = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(value, Op::Conv2d { x, w, b, stride, pad }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Multiplies every channel of `x` by the single-channel map `m`.
    pub fn mul_channels(&mut self, x: Var, m: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(self.value(m).shape(), &[n, 1, h, w], "mask shape mismatch");
        let hw = h * w;
        let xv = self.value(x).data();
        let mv = self.value(m).data();
        let mut out = Vec::with_capacity(xv.len());
        for b in 0..n {
            let mb = &mv[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let xb = &xv[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                out.extend(xb.iter().zip(mb).map(|(&p, &q)| p * q));
            }
        }
        let ng = self.ng(x) || self.ng(m);
        self.push(Tensor::from_vec(&[n, c, h, w], out), Op::MulChannels { x, m }, ng)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        let value = self.value(a).map(|v| scale * v + shift);
        let ng = self.ng(a);
        self.push(value, Op::Affine { a, scale }, ng)
    }

    pub fn scale(&mut self, a: Var, scale: T) -> Var {
        self.affine(a, scale, T::zero())
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -T::one(), T::one())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self.value(a).map(|v| if v > T::zero() { v } else { slope * v });
        let ng = self.ng(a);
        self.push(value, Op::LeakyRelu { a, slope }, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| T::one() / (T::one() + (-v).exp()));
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    /// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, a: Var) -> Var {
        let (n, c, h, w) = self.value(a).dims4();
        let (ho, wo) = (h / 2, w / 2);
        assert!(ho > 0 && wo > 0, "max_pool2 on {h}x{w} input");
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::from_vec(&[n, c, ho, wo], out), Op::MaxPool2 { a, argmax }, ng)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, a: Var) -> Var {
        let (n, c, h, w) = self.value(a).dims4();
        let src = self.value(a).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                for x in 0..wo {
                    d[y * wo + x] = s[(y / 2) * w + x / 2];
                }
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::from_vec(&[n, c, ho, wo], out), Op::Upsample2(a), ng)
    }

    pub fn cat_channels(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::cat_channels(&tensors);
        let ng = parts.iter().any(|&v| self.ng(v));
        self.push(value, Op::CatChannels(parts.to_vec()), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let ng = self.ng(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// `[n, c, h, w] -> [n, c]` spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Var {
        let (n, c, h, w) = self.value(a).dims4();
        let hw = T::from_usize(h * w).expect("size fits");
        let src = self.value(a).data();
        let out = src.chunks_exact(h * w).map(|p| p.iter().copied().sum::<T>() / hw).collect();
        let ng = self.ng(a);
        self.push(Tensor::from_vec(&[n, c], out), Op::GlobalAvgPool(a), ng)
    }

    /// `x [n, f] * w[o, f]^T + b[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, f) = self.value(x).dims2();
        let (o, wf) = self.value(w).dims2();
        assert_eq!(f, wf, "linear feature mismatch");
        let mut out = vec![T::zero(); n * o];
        crate::real::gemm(
            T::one(),
            crate::real::MatRef::row_major(self.value(x).data(), n, f),
            crate::real::MatRef::transposed(self.value(w).data(), o, f),
            T::zero(),
            &mut out,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), o, "linear bias mismatch");
            for row in out.chunks_exact_mut(o) {
                for (v, &bb) in row.iter_mut().zip(bv) {
                    *v += bb;
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(Tensor::from_vec(&[n, o], out), Op::Linear { x, w, b }, ng)
    }

    /// Applies a fixed linear resampling map to every channel. `samplers`
    /// holds either one map shared by the batch or one map per batch item.
    pub fn resample(&mut self, a: Var, samplers: Arc<[Sampler]>) -> Var {
        let (n, c, h, w) = self.value(a).dims4();
        assert!(samplers.len() == 1 || samplers.len() == n, "need 1 or {n} samplers");
        let (oh, ow) = (samplers[0].out_h, samplers[0].out_w);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for b in 0..n {
            let s = &samplers[if samplers.len() == 1 { 0 } else { b }];
            assert!(s.in_h == h && s.in_w == w && s.out_h == oh && s.out_w == ow, "sampler shape mismatch");
            for ch in 0..c {
                let p = b * c + ch;
                let plane = &src[p * h * w..(p + 1) * h * w];
                let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
                for (d, taps) in dst.iter_mut().zip(s.taps()) {
                    let mut acc = T::zero();
                    for t in taps {
                        if t.weight != 0.0 {
                            acc += T::from_f64c(t.weight) * plane[t.index as usize];
                        }
                    }
                    *d = acc;
                }
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::from_vec(&[n, c, oh, ow], out), Op::Resample { a, samplers }, ng)
    }

    /// Reverse pass from a one-element `loss`, seeded with gradient 1.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backward_node(node, &gy, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(gy);
            }
        }
        Gradients { grads }
    }

    fn backward_node(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let want = (self.ng(*x), self.ng(*w), b.is_some_and(|b| self.ng(b)));
                let cg = conv2d_backward(self.value(*x), self.value(*w), gy, *stride, *pad, want);
                if let Some(dx) = cg.dx {
                    accumulate(&mut grads[x.0], dx);
                }
                if let Some(dw) = cg.dw {
                    accumulate(&mut grads[w.0], dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.ng(*v) {
                        accumulate(&mut grads[v.0], gy.clone());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], gy.clone());
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], gy.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], gy.zip_map(self.value(*b), |g, y| g * y));
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], gy.zip_map(self.value(*a), |g, x| g * x));
                }
            }
            Op::MulChannels { x, m } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let hw = h * w;
                let mv = self.value(*m).data();
                if self.ng(*x) {
                    let mut dx = Vec::with_capacity(gy.len());
                    for b in 0..n {
                        let mb = &mv[b * hw..(b + 1) * hw];
                        for ch in 0..c {
                            let gb = &gy.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                            dx.extend(gb.iter().zip(mb).map(|(&g, &q)| g * q));
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor::from_vec(&[n, c, h, w], dx));
                }
                if self.ng(*m) {
                    let xv = self.value(*x).data();
                    let mut dm = vec![T::zero(); n * hw];
                    for b in 0..n {
                        let db = &mut dm[b * hw..(b + 1) * hw];
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            for ((d, &g), &p) in db.iter_mut().zip(&gy.data()[off..off + hw]).zip(&xv[off..off + hw]) {
                                *d += g * p;
                            }
                        }
                    }
                    accumulate(&mut grads[m.0], Tensor::from_vec(&[n, 1, h, w], dm));
                }
            }
            Op::Affine { a, scale } => {
                let s = *scale;
                accumulate(&mut grads[a.0], gy.map(|g| g * s));
            }
            Op::LeakyRelu { a, slope } => {
                let s = *slope;
                let d = gy.zip_map(self.value(*a), |g, x| if x > T::zero() { g } else { g * s });
                accumulate(&mut grads[a.0], d);
            }
            Op::Sigmoid(a) => {
                let d = gy.zip_map(&node.value, |g, y| g * y * (T::one() - y));
                accumulate(&mut grads[a.0], d);
            }
            Op::MaxPool2 { a, argmax } => {
                let mut d = Tensor::zeros(self.value(*a).shape());
                let dd = d.data_mut();
                for (&idx, &g) in argmax.iter().zip(gy.data()) {
                    dd[idx as usize] += g;
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::Upsample2(a) => {
                let (n, c, h, w) = self.value(*a).dims4();
                let (ho, wo) = (2 * h, 2 * w);
                let mut d = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let g = &gy.data()[p * ho * wo..(p + 1) * ho * wo];
                    let dp = &mut d[p * h * w..(p + 1) * h * w];
                    for y in 0..ho {
                        for x in 0..wo {
                            dp[(y / 2) * w + x / 2] += g[y * wo + x];
                        }
                    }
                }
                accumulate(&mut grads[a.0], Tensor::from_vec(&[n, c, h, w], d));
            }
            Op::CatChannels(parts) => {
                let (n, total_c, h, w) = gy.dims4();
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(n * pc * hw);
                        for b in 0..n {
                            let start = (b * total_c + offset) * hw;
                            d.extend_from_slice(&gy.data()[start..start + pc * hw]);
                        }
                        accumulate(&mut grads[p.0], Tensor::from_vec(&[n, pc, h, w], d));
                    }
                    offset += pc;
                }
            }
            Op::Sum(a) => {
                accumulate(&mut grads[a.0], Tensor::full(self.value(*a).shape(), gy.item()));
            }
            Op::Mean(a) => {
                let len = T::from_usize(self.value(*a).len()).expect("size fits");
                accumulate(&mut grads[a.0], Tensor::full(self.value(*a).shape(), gy.item() / len));
            }
            Op::GlobalAvgPool(a) => {
                let (n, c, h, w) = self.value(*a).dims4();
                let hw = T::from_usize(h * w).expect("size fits");
                let mut d = Vec::with_capacity(n * c * h * w);
                for &g in gy.data() {
                    d.extend(std::iter::repeat_n(g / hw, h * w));
                }
                accumulate(&mut grads[a.0], Tensor::from_vec(&[n, c, h, w], d));
            }
            Op::Linear { x, w, b } => {
                let (n, f) = self.value(*x).dims2();
                let (o, _) = self.value(*w).dims2();
                use crate::real::{gemm, MatRef};
                if self.ng(*x) {
                    let mut dx = vec![T::zero(); n * f];
                    gemm(
                        T::one(),
                        MatRef::row_major(gy.data(), n, o),
                        MatRef::row_major(self.value(*w).data(), o, f),
                        T::zero(),
                        &mut dx,
                    );
                    accumulate(&mut grads[x.0], Tensor::from_vec(&[n, f], dx));
                }
                if self.ng(*w) {
                    let mut dw = vec![T::zero(); o * f];
                    gemm(
                        T::one(),
                        MatRef::transposed(gy.data(), n, o),
                        MatRef::row_major(self.value(*x).data(), n, f),
                        T::zero(),
                        &mut dw,
                    );
                    accumulate(&mut grads[w.0], Tensor::from_vec(&[o, f], dw));
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let mut db = vec![T::zero(); o];
                        for row in gy.data().chunks_exact(o) {
                            for (d, &g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                        accumulate(&mut grads[b.0], Tensor::from_vec(&[o], db));
                    }
                }
            }
            Op::Resample { a, samplers } => {
                let (n, c, h, w) = self.value(*a).dims4();
                let (oh, ow) = (samplers[0].out_h, samplers[0].out_w);
                let mut d = vec![T::zero(); n * c * h * w];
                for b in 0..n {
                    let s = &samplers[if samplers.len() == 1 { 0 } else { b }];
                    for ch in 0..c {
                        let p = b * c + ch;
                        let g = &gy.data()[p * oh * ow..(p + 1) * oh * ow];
                        let dp = &mut d[p * h * w..(p + 1) * h * w];
                        for (&gv, taps) in g.iter().zip(s.taps()) {
                            for t in taps {
                                if t.weight != 0.0 {
                                    dp[t.index as usize] += T::from_f64c(t.weight) * gv;
                                }
                            }
                        }
                    }
                }
                accumulate(&mut grads[a.0], Tensor::from_vec(&[n, c, h, w], d));
            }
        }
    }
}
