//! Training objectives.
//!
//! Squared norms are reduced by the mean over pixels and batch items.
//! Scalar helpers operate on plain numbers; the `*_graph` builders record
//! the same quantities on a [`Graph`] so they can be differentiated.

use std::sync::Arc;

use bkt_tensor::{Graph, ParamSet, Real, Sampler, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::datamodel::Mask;
use crate::morphology::weight_bits;
use crate::networks::{Critic, Segmenter};
use crate::transforms::AffineTransform;
use crate::{Error, Result};

/// Per-step loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: f64,
    pub self_sup: f64,
    pub adv_outer: f64,
    pub adv_inner: f64,
    pub gen_total: f64,
    pub critic_outer_total: f64,
    pub critic_inner_total: f64,
    pub gp_outer: f64,
    pub gp_inner: f64,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [
            self.rec,
            self.self_sup,
            self.adv_outer,
            self.adv_inner,
            self.gen_total,
            self.critic_outer_total,
            self.critic_inner_total,
            self.gp_outer,
            self.gp_inner,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `mean((pred - gt)^2)` over pixels.
pub fn reconstruction_loss(pred: &Mask, gt: &Mask) -> Result<f64> {
    if !pred.same_grid(gt) {
        return Err(Error::DimensionMismatch("prediction and ground truth differ in size".into()));
    }
    Ok(mean(&pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b) * (a - b)).collect::<Vec<_>>()))
}

/// Critic objective `w_f mean(fake) + w_p mean(pseudo) - mean(real) + gp`
/// with `w_f = w_p = 1/2`, or `w_f = 1` when `scores_pseudo` is `None`.
pub fn critic_loss(scores_fake: &[f64], scores_pseudo: Option<&[f64]>, scores_real: &[f64], gp: f64) -> Result<f64> {
    let n = scores_fake.len();
    if n == 0 || scores_real.len() != n || scores_pseudo.is_some_and(|p| p.len() != n) {
        return Err(Error::DimensionMismatch("score batches must be non-empty and equally sized".into()));
    }
    Ok(match scores_pseudo {
        Some(p) => 0.5 * mean(scores_fake) + 0.5 * mean(p) - mean(scores_real) + gp,
        None => mean(scores_fake) - mean(scores_real) + gp,
    })
}

pub fn critic_loss_outer(fake: &[f64], pseudo: &[f64], real: &[f64], gp: f64) -> Result<f64> {
    critic_loss(fake, Some(pseudo), real, gp)
}

pub fn critic_loss_inner(fake: &[f64], pseudo: &[f64], real: &[f64], gp: f64) -> Result<f64> {
    critic_loss(fake, Some(pseudo), real, gp)
}

/// `tau rec + eta sel - s_outer - s_inner`; pass `0` for a disabled score.
pub fn generator_loss(rec: f64, sel: f64, score_outer: f64, score_inner: f64, tau: f64, eta: f64) -> f64 {
    tau * rec + eta * sel - score_outer - score_inner
}

/// Anything whose input gradient can be evaluated for a batch.
pub trait InputGradient {
    /// `d score_k / d x_k` for every item of `x` (`[n, ...]`).
    fn input_gradients(&self, x: &Tensor<f64>) -> Tensor<f64>;
}

/// A critic together with concrete parameters.
pub struct BoundCritic<'a> {
    pub critic: &'a Critic,
    pub params: &'a ParamSet<f64>,
}

impl InputGradient for BoundCritic<'_> {
    fn input_gradients(&self, x: &Tensor<f64>) -> Tensor<f64> {
        self.critic.score_and_input_grad(self.params, x).1
    }
}

fn item_norms<T: Real>(g: &Tensor<T>) -> Vec<f64> {
    let n = g.shape()[0];
    let per = g.len() / n;
    (0..n).map(|k| g.data()[k * per..(k + 1) * per].iter().map(|v| v.to_f64c().powi(2)).sum::<f64>().sqrt()).collect()
}

/// `lambda * mean_k (||g_k|| - 1)^2` given per-item input gradients.
pub fn penalty_from_gradients<T: Real>(grads: &Tensor<T>, lambda: f64) -> f64 {
    lambda * mean(&item_norms(grads).iter().map(|n| (n - 1.0).powi(2)).collect::<Vec<_>>())
}

/// Gradient penalty of an arbitrary differentiable critic on interpolated
/// inputs.
pub fn gradient_penalty(critic: &impl InputGradient, interpolated: &Tensor<f64>, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    penalty_from_gradients(&critic.input_gradients(interpolated), lambda)
}

/// Records the gradient penalty of `critic` on `interpolated` so that its
/// parameter gradient is exact. Returns the loss variable and its value.
///
/// The penalty depends on `g_k = ∇_x D(x_k)`. For a piecewise-linear critic,
/// `∂/∂φ (||g_k|| - 1)^2 = c_k ∂/∂φ <g_k(φ), v_k>` with `v_k = g_k` frozen and
/// `c_k = 2 (||g_k|| - 1) / ||g_k||`, and the directional derivative
/// `<g_k(φ), v_k>` is recorded by [`Critic::tangent`]. The recorded variable
/// is shifted so that its value equals the true penalty.
pub fn gradient_penalty_graph<T: Real>(
    g: &mut Graph<T>,
    critic: &Critic,
    params: &ParamSet<T>,
    vars: &[Var],
    interpolated: &Tensor<T>,
    lambda: f64,
) -> (Var, f64) {
    let n = interpolated.shape()[0];
    let (_, grads, preacts) = critic.score_and_input_grad(params, interpolated);
    let norms = item_norms(&grads);
    let value = lambda * mean(&norms.iter().map(|v| (v - 1.0).powi(2)).collect::<Vec<_>>());
    let jvp = critic.tangent(g, vars, &preacts, grads);
    let coeff: Vec<T> = norms
        .iter()
        .map(|&v| if v > 0.0 { T::from_f64c(lambda * 2.0 * (v - 1.0) / v / n as f64) } else { T::zero() })
        .collect();
    let c = g.constant(Tensor::from_vec(&[n, 1], coeff));
    let weighted = g.mul(jvp, c);
    let surrogate = g.sum(weighted);
    let shift = T::from_f64c(value) - g.value(surrogate).item();
    (g.affine(surrogate, T::one(), shift), value)
}

/// Weight on the fake term: `1/2`, or `1` without pseudo triplets.
pub fn fake_weight(with_pseudo: bool) -> f64 {
    if with_pseudo {
        0.5
    } else {
        1.0
    }
}

/// Graph form of [`critic_loss`]; score variables are `[n, 1]`.
pub fn critic_loss_graph<T: Real>(g: &mut Graph<T>, fake: Var, pseudo: Option<Var>, real: Var, gp: Option<Var>) -> Var {
    let mf = g.mean(fake);
    let mr = g.mean(real);
    let mut loss = g.scale(mf, T::from_f64c(fake_weight(pseudo.is_some())));
    if let Some(p) = pseudo {
        let mp = g.mean(p);
        let hp = g.scale(mp, T::from_f64c(0.5));
        loss = g.add(loss, hp);
    }
    loss = g.sub(loss, mr);
    if let Some(gp) = gp {
        loss = g.add(loss, gp);
    }
    loss
}

/// Encoded critic inputs for one update.
pub struct CriticInputs<T> {
    pub fake: Tensor<T>,
    /// `None` drops the pseudo term (and doubles the fake weight).
    pub pseudo: Option<Tensor<T>>,
    pub real: Tensor<T>,
}

/// Full critic objective with the penalty on `eps`-interpolations between
/// real and fake inputs. Returns `(loss, penalty value)`.
pub fn critic_objective_graph<T: Real>(
    g: &mut Graph<T>,
    critic: &Critic,
    params: &ParamSet<T>,
    vars: &[Var],
    inputs: CriticInputs<T>,
    eps: &[f64],
    lambda: f64,
) -> (Var, f64) {
    let gp = if lambda > 0.0 {
        let interp = crate::triplets::interpolate_batch(&inputs.real, &inputs.fake, eps);
        Some(gradient_penalty_graph(g, critic, params, vars, &interp, lambda))
    } else {
        None
    };
    let f = g.constant(inputs.fake);
    let sf = critic.forward(g, vars, f);
    let sp = inputs.pseudo.map(|p| {
        let p = g.constant(p);
        critic.forward(g, vars, p)
    });
    let r = g.constant(inputs.real);
    let sr = critic.forward(g, vars, r);
    let loss = critic_loss_graph(g, sf, sp, sr, gp.map(|(v, _)| v));
    (loss, gp.map_or(0.0, |(_, v)| v))
}

/// `tau rec + eta sel - sum(scores)` over the terms that are present.
pub fn generator_loss_graph<T: Real>(g: &mut Graph<T>, rec: Option<Var>, sel: Option<Var>, scores: &[Var], tau: f64, eta: f64) -> Option<Var> {
    let mut terms: Vec<(Var, f64)> = Vec::new();
    terms.extend(rec.map(|v| (v, tau)));
    terms.extend(sel.map(|v| (v, eta)));
    terms.extend(scores.iter().map(|&v| (v, -1.0)));
    let mut total: Option<Var> = None;
    for (v, c) in terms {
        let scaled = g.scale(v, T::from_f64c(c));
        total = Some(match total {
            Some(t) => g.add(t, scaled),
            None => scaled,
        });
    }
    total
}

/// `mean((pred - gt)^2)` on `[n, 1, h, w]` variables.
pub fn reconstruction_graph<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Var {
    let d = g.sub(pred, gt);
    let sq = g.mul(d, d);
    g.mean(sq)
}

/// Per-item bilinear samplers for a batch of transforms.
pub fn samplers(transforms: &[AffineTransform], h: usize, w: usize) -> Arc<[Sampler]> {
    transforms.iter().map(|a| a.sampler(h, w)).collect::<Vec<_>>().into()
}

/// Boundary weight maps of a probability batch `[n, 1, h, w]` at
/// threshold 0.5, one radius per item.
pub fn weight_maps<T: Real>(pred: &Tensor<T>, radii: &[usize]) -> Tensor<T> {
    let (n, _, h, w) = pred.dims4();
    assert_eq!(radii.len(), n, "one radius per item");
    let mut out = Vec::with_capacity(pred.len());
    for (k, &r) in radii.iter().enumerate() {
        let bits: Vec<bool> = pred.batch_item(k).iter().map(|v| v.to_f64c() >= 0.5).collect();
        out.extend(weight_bits(h, w, &bits, r).into_iter().map(|b| if b { T::one() } else { T::zero() }));
    }
    Tensor::from_vec(pred.shape(), out)
}

/// Applies per-item samplers to a batch tensor.
pub fn warp_tensor<T: Real>(x: &Tensor<T>, samplers: Arc<[Sampler]>) -> Tensor<T> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = g.resample(v, samplers);
    g.value(out).clone()
}

/// Weight maps for the self-supervised loss; `None` recomputes them from the
/// current predictions.
pub struct FrozenWeights<T> {
    pub warped_branch: Tensor<T>,
    pub plain_branch: Tensor<T>,
}

/// Output of [`self_supervised_graph`].
pub struct SelfSupervised<T> {
    pub loss: Var,
    pub weights: FrozenWeights<T>,
    /// Prediction on the unwarped batch.
    pub plain_prediction: Var,
}

/// Equivariance loss restricted to boundary bands:
/// `mean((w' F(A x) - A(w F(x)))^2)`, with `w' = W_r(F(A x))` and
/// `w = W_r(F(x))` treated as constants.
pub fn self_supervised_graph<T: Real>(
    g: &mut Graph<T>,
    net: &dyn Segmenter<T>,
    x: &Tensor<T>,
    transforms: &[AffineTransform],
    radii: &[usize],
    frozen: Option<FrozenWeights<T>>,
) -> SelfSupervised<T> {
    let (_, _, h, w) = x.dims4();
    let s = samplers(transforms, h, w);
    let xw = g.constant(warp_tensor(x, s.clone()));
    let xv = g.constant(x.clone());
    let m1 = net.forward(g, xw);
    let m2 = net.forward(g, xv);
    let weights = frozen.unwrap_or_else(|| FrozenWeights {
        warped_branch: weight_maps(g.value(m1), radii),
        plain_branch: weight_maps(g.value(m2), radii),
    });
    let w1 = g.constant(weights.warped_branch.clone());
    let w2 = g.constant(weights.plain_branch.clone());
    let left = g.mul(m1, w1);
    let band = g.mul(m2, w2);
    let right = g.resample(band, s);
    let d = g.sub(left, right);
    let sq = g.mul(d, d);
    let loss = g.mean(sq);
    SelfSupervised { loss, weights, plain_prediction: m2 }
}

/// Scalar self-supervised loss of a segmenter on a batch.
pub fn self_supervised_loss<T: Real>(net: &dyn Segmenter<T>, x: &Tensor<T>, transforms: &[AffineTransform], radii: &[usize]) -> f64 {
    let mut g = Graph::new();
    let out = self_supervised_graph(&mut g, net, x, transforms, radii, None);
    g.value(out.loss).item().to_f64c()
}
