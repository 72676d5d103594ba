//! The segmentation network and the boundary critics.
//!
//! Both are plain descriptors plus a flat [`ParamSet`]; forward passes are
//! recorded on a caller-owned [`Graph`] with the parameters bound as
//! variables, so the same code serves training and inference.

use bkt_tensor::{Graph, ParamSet, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Image, Mask};
use crate::{Error, Result};

/// Leaky-ReLU slope used throughout the critic.
pub const CRITIC_SLOPE: f64 = 0.2;

fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::from_f64c(rng.random_range(-bound..bound))).collect())
}

fn conv_params<T: Real, R: Rng + ?Sized>(
    p: &mut ParamSet<T>,
    rng: &mut R,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    gain: f64,
) {
    let fan_in = (cin * k * k) as f64;
    p.push(format!("{name}.w"), uniform(rng, &[cout, cin, k, k], (gain / fan_in).sqrt()));
    p.push(format!("{name}.b"), Tensor::zeros(&[cout]));
}

/// U-shaped encoder-decoder: two 3x3 conv + ReLU per level, 2x2 max-pool
/// down, nearest 2x upsampling plus skip concatenation up, 1x1 sigmoid head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegNet {
    pub in_channels: usize,
    pub widths: Vec<usize>,
}

impl SegNet {
    pub fn new(in_channels: usize, widths: Vec<usize>) -> Self {
        assert!(!widths.is_empty() && in_channels > 0, "empty architecture");
        Self { in_channels, widths }
    }

    /// Input side lengths must be divisible by this.
    pub fn granularity(&self) -> usize {
        1 << (self.widths.len() - 1)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet<T> {
        let mut p = ParamSet::new();
        let ws = &self.widths;
        let mut cin = self.in_channels;
        for (l, &w) in ws.iter().enumerate() {
            conv_params(&mut p, rng, &format!("enc{l}.0"), cin, w, 3, 6.0);
            conv_params(&mut p, rng, &format!("enc{l}.1"), w, w, 3, 6.0);
            cin = w;
        }
        for l in (0..ws.len() - 1).rev() {
            conv_params(&mut p, rng, &format!("dec{l}.0"), ws[l + 1] + ws[l], ws[l], 3, 6.0);
            conv_params(&mut p, rng, &format!("dec{l}.1"), ws[l], ws[l], 3, 6.0);
        }
        conv_params(&mut p, rng, "head", ws[0], 1, 1, 1.0);
        p
    }

    /// Foreground probabilities `[n, 1, h, w]` for images `[n, c, h, w]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Var {
        let mut it = params.chunks(2);
        let mut conv = |g: &mut Graph<T>, x: Var, k_pad: usize| {
            let wb = it.next().expect("parameter count");
            g.conv2d(x, wb[0], Some(wb[1]), 1, k_pad)
        };
        let levels = self.widths.len();
        let mut skips = Vec::with_capacity(levels);
        let mut h = x;
        for l in 0..levels {
            if l > 0 {
                h = g.max_pool2(h);
            }
            let a = conv(g, h, 1);
            let a = g.relu(a);
            let b = conv(g, a, 1);
            h = g.relu(b);
            skips.push(h);
        }
        for l in (0..levels - 1).rev() {
            let up = g.upsample2(h);
            let cat = g.cat_channels(&[up, skips[l]]);
            let a = conv(g, cat, 1);
            let a = g.relu(a);
            let b = conv(g, a, 1);
            h = g.relu(b);
        }
        let logits = conv(g, h, 0);
        g.sigmoid(logits)
    }

    fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        let k = self.granularity();
        if c != self.in_channels || h % k != 0 || w % k != 0 {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} channels and sides divisible by {k}, got {c}x{h}x{w}",
                self.in_channels
            )));
        }
        Ok(())
    }

    /// Inference on a batch tensor.
    pub fn predict_tensor<T: Real>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, h, w) = x.dims4();
        self.check_input(c, h, w)?;
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &vars, xv);
        Ok(g.value(out).clone())
    }

    /// Soft mask for one image.
    pub fn segment<T: Real>(&self, params: &ParamSet<T>, x: &Image) -> Result<Mask> {
        let (c, h, w) = (x.channels(), x.height(), x.width());
        let t = Tensor::from_vec(&[1, c, h, w], x.data().iter().map(|&v| T::from_f64c(v)).collect());
        let out = self.predict_tensor(params, &t)?;
        Mask::soft(h, w, out.data().iter().map(|v| v.to_f64c()).collect())
    }
}

/// Anything that maps an image batch variable to a probability batch.
pub trait Segmenter<T: Real> {
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Var;
}

/// A [`SegNet`] whose parameters are already bound on a graph.
pub struct BoundSegNet<'a> {
    pub net: &'a SegNet,
    pub params: &'a [Var],
}

impl<T: Real> Segmenter<T> for BoundSegNet<'_> {
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Var {
        self.net.forward(g, self.params, x)
    }
}

/// Strided convolutional encoder with leaky activations, global average
/// pooling and a linear scalar head. No normalization couples batch items.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critic {
    pub in_channels: usize,
    pub widths: Vec<usize>,
}

/// Pre-activations of every hidden layer, recorded during a forward pass.
pub struct CriticTrace {
    pub preacts: Vec<Var>,
    pub features: Var,
}

impl Critic {
    pub fn new(in_channels: usize, widths: Vec<usize>) -> Self {
        assert!(!widths.is_empty() && in_channels > 0, "empty architecture");
        Self { in_channels, widths }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet<T> {
        let mut p = ParamSet::new();
        let gain = 6.0 / (1.0 + CRITIC_SLOPE * CRITIC_SLOPE);
        let mut cin = self.in_channels;
        for (l, &w) in self.widths.iter().enumerate() {
            conv_params(&mut p, rng, &format!("block{l}"), cin, w, 3, gain);
            cin = w;
        }
        let bound = 1.0 / (cin as f64).sqrt();
        p.push("head.w", uniform(rng, &[1, cin], bound));
        p.push("head.b", Tensor::zeros(&[1]));
        p
    }

    /// Scores `[n, 1]` for encoded triplets `[n, in_channels, h, w]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Var {
        self.forward_traced(g, params, x).0
    }

    pub fn forward_traced<T: Real>(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> (Var, CriticTrace) {
        assert_eq!(g.value(x).dims4().1, self.in_channels, "critic input channels");
        let slope = T::from_f64c(CRITIC_SLOPE);
        let mut h = x;
        let mut preacts = Vec::with_capacity(self.widths.len());
        for l in 0..self.widths.len() {
            let z = g.conv2d(h, params[2 * l], Some(params[2 * l + 1]), 2, 1);
            preacts.push(z);
            h = g.leaky_relu(z, slope);
        }
        let features = g.global_avg_pool(h);
        let n = self.widths.len();
        let score = g.linear(features, params[2 * n], Some(params[2 * n + 1]));
        (score, CriticTrace { preacts, features })
    }

    /// Directional derivative of each item's score at the traced point along
    /// `tangent` (same shape as the input). Activation slopes are frozen at
    /// the traced pre-activations, so the result is differentiable in the
    /// parameters but treats the tangent and the slopes as constants.
    pub fn tangent<T: Real>(&self, g: &mut Graph<T>, params: &[Var], preacts: &[Tensor<T>], tangent: Tensor<T>) -> Var {
        let slope = T::from_f64c(CRITIC_SLOPE);
        let mut t = g.constant(tangent);
        for (l, z) in preacts.iter().enumerate() {
            let u = g.conv2d(t, params[2 * l], None, 2, 1);
            let d = g.constant(z.map(|v| if v > T::zero() { T::one() } else { slope }));
            t = g.mul(u, d);
        }
        let f = g.global_avg_pool(t);
        let n = self.widths.len();
        g.linear(f, params[2 * n], None)
    }

    /// Scores and input gradients for a batch, with parameters held fixed.
    pub fn score_and_input_grad<T: Real>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Vec<Tensor<T>>) {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let xv = g.leaf(x.clone(), true);
        let (score, trace) = self.forward_traced(&mut g, &vars, xv);
        let total = g.sum(score);
        let mut grads = g.backward(total);
        let gx = grads.take(xv).expect("input is on the gradient path");
        let pre = trace.preacts.iter().map(|&z| g.value(z).clone()).collect();
        (g.value(score).clone(), gx, pre)
    }

    /// Scores for a batch without gradient tracking.
    pub fn score_tensor<T: Real>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Tensor<T> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let s = self.forward(&mut g, &vars, xv);
        g.value(s).clone()
    }
}
