//! The alternating training loop: `n_critic` critic updates, then one
//! segmentation-network update, per outer iteration.
//!
//! All randomness is drawn from the state's own generator, in a fixed order,
//! so a run is reproducible from `(config, data)` and resumable from a
//! checkpoint.

use bkt_tensor::{Adam, AdamConfig, Graph, ParamSet, Real, Tensor, Var};
use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Image, InnerPseudo, LabeledSample, Mask, SourceDataset, TargetDataset, TrainingConfig};
use crate::losses::{
    critic_objective_graph, generator_loss_graph, reconstruction_graph, self_supervised_graph, CriticInputs,
    LossReport,
};
use crate::morphology::{dilate_bits, erode_bits};
use crate::networks::{BoundSegNet, Critic, SegNet};
use crate::transforms::{sample_transform, AffineTransform, TransformRanges};
use crate::triplets::{encode, encode_tensor};
use crate::{Error, Result};

/// One critic with its optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticState<T: Real> {
    pub net: Critic,
    pub params: ParamSet<T>,
    pub adam: Adam<T>,
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState<T: Real = f32> {
    /// Completed outer iterations.
    pub step: u64,
    pub config: TrainingConfig,
    pub seg: SegNet,
    pub theta: ParamSet<T>,
    pub adam_theta: Adam<T>,
    /// Outer critic, or the joint critic under `single_discriminator`.
    pub outer: Option<CriticState<T>>,
    pub inner: Option<CriticState<T>>,
    pub rng: ChaCha8Rng,
}

/// Loss values of one outer iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossReport,
}

/// Observer of a training run.
pub trait TrainHooks<T: Real> {
    fn on_step(&mut self, _state: &TrainerState<T>, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_every` iterations.
    fn on_checkpoint(&mut self, _state: &TrainerState<T>) -> Result<()> {
        Ok(())
    }

    /// Validation score (higher is better), called every `eval_every`
    /// iterations; `None` disables early stopping.
    fn validate(&mut self, _state: &TrainerState<T>) -> Option<f64> {
        None
    }
}

/// Hooks that do nothing.
pub struct NoHooks;

impl<T: Real> TrainHooks<T> for NoHooks {}

fn adam_config(cfg: &TrainingConfig) -> AdamConfig {
    AdamConfig { lr: cfg.adam_alpha, beta1: cfg.adam_beta1, beta2: cfg.adam_beta2, eps: 1e-8 }
}

/// Critic input channels for `c`-channel images.
pub fn triplet_channels(c: usize) -> usize {
    2 * c + 1
}

impl<T: Real> TrainerState<T> {
    /// Fresh parameters for `channels`-channel images, drawn from `cfg.seed`.
    pub fn new(cfg: &TrainingConfig, channels: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let seg = SegNet::new(channels, cfg.seg_widths.clone());
        let theta = seg.init(&mut rng);
        let adam = adam_config(cfg);
        let a = &cfg.ablation;
        let tc = triplet_channels(channels);
        let critic = |cin: usize, rng: &mut ChaCha8Rng| {
            let net = Critic::new(cin, cfg.critic_widths.clone());
            let params = net.init(rng);
            let adam = Adam::new(adam, &params);
            CriticState { net, params, adam }
        };
        let (outer, inner) = if a.no_critics() {
            (None, None)
        } else if a.single_discriminator {
            (Some(critic(2 * tc, &mut rng)), None)
        } else {
            let o = (!a.no_outer).then(|| critic(tc, &mut rng));
            let i = (!a.no_inner).then(|| critic(tc, &mut rng));
            (o, i)
        };
        Ok(Self { step: 0, config: cfg.clone(), adam_theta: Adam::new(adam, &theta), seg, theta, outer, inner, rng })
    }

    /// Soft masks for a batch of images.
    pub fn predict(&self, images: &[&Image]) -> Result<Vec<Mask>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(16) {
            let x = image_batch::<T>(chunk);
            let y = self.seg.predict_tensor(&self.theta, &x)?;
            let (h, w) = (chunk[0].height(), chunk[0].width());
            for k in 0..chunk.len() {
                out.push(Mask::soft(h, w, y.batch_item(k).iter().map(|v| v.to_f64c().clamp(0.0, 1.0)).collect())?);
            }
        }
        Ok(out)
    }

    /// Hashes of `(theta, phi, phi')`, zero for absent critics.
    pub fn fingerprints(&self) -> (u64, u64, u64) {
        let fp = |c: &Option<CriticState<T>>| c.as_ref().map_or(0, |c| c.params.fingerprint());
        (self.theta.fingerprint(), fp(&self.outer), fp(&self.inner))
    }
}

/// `[n, c, h, w]` tensor from images.
pub fn image_batch<T: Real>(images: &[&Image]) -> Tensor<T> {
    let (c, h, w) = (images[0].channels(), images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for im in images {
        assert_eq!((im.channels(), im.height(), im.width()), (c, h, w), "batch images differ in shape");
        data.extend(im.data().iter().map(|&v| T::from_f64c(v)));
    }
    Tensor::from_vec(&[images.len(), c, h, w], data)
}

/// `[n, 1, h, w]` tensor from masks.
pub fn mask_batch<T: Real>(masks: &[&Mask]) -> Tensor<T> {
    let (h, w) = (masks[0].height(), masks[0].width());
    let data = masks.iter().flat_map(|m| m.data().iter().map(|&v| T::from_f64c(v))).collect();
    Tensor::from_vec(&[masks.len(), 1, h, w], data)
}

fn bits_batch<T: Real>(items: Vec<Vec<bool>>, h: usize, w: usize) -> Tensor<T> {
    let n = items.len();
    let data = items.into_iter().flatten().map(|b| if b { T::one() } else { T::zero() }).collect();
    Tensor::from_vec(&[n, 1, h, w], data)
}

fn one_minus<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| T::one() - v)
}

fn draw_radii(rng: &mut ChaCha8Rng, cfg: &TrainingConfig, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(cfg.radius_min..=cfg.radius_max)).collect()
}

fn draw_indices(rng: &mut ChaCha8Rng, pool: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..pool)).collect()
}

fn value<T: Real>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).item().to_f64c()
}

fn non_finite(step: u64, what: &str, v: f64) -> Error {
    Error::NonFinite { step, detail: format!("{what} = {v}") }
}

/// Descends the critic objective once; returns `(total, gp)`.
fn update_critic<T: Real>(cs: &mut CriticState<T>, inputs: CriticInputs<T>, eps: &[f64], lambda: f64, step: u64) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let vars = cs.params.bind(&mut g, true);
    let (loss, gp) = critic_objective_graph(&mut g, &cs.net, &cs.params, &vars, inputs, eps, lambda);
    let total = value(&g, loss);
    if !total.is_finite() || !gp.is_finite() {
        return Err(non_finite(step, "critic loss", total));
    }
    let mut grads = g.backward(loss);
    let gs = cs.params.collect_grads(&vars, &mut grads);
    cs.adam.update(&mut cs.params, &gs);
    Ok((total, gp))
}

fn check_pools(source: &SourceDataset, target: &TargetDataset) -> Result<()> {
    if source.is_empty() {
        return Err(Error::EmptyDataset("source".into()));
    }
    if target.train_len() == 0 {
        return Err(Error::EmptyDataset("target".into()));
    }
    Ok(())
}

/// One update of every enabled critic. `theta` is read, never written.
pub fn critic_step<T: Real>(state: &mut TrainerState<T>, source: &SourceDataset, target: &TargetDataset) -> Result<LossReport> {
    check_pools(source, target)?;
    let cfg = state.config.clone();
    let mut report = LossReport::default();
    if state.outer.is_none() && state.inner.is_none() {
        return Ok(report);
    }
    let k = cfg.batch_size;
    let rng = &mut state.rng;
    let ti = draw_indices(rng, target.train_len(), k);
    let si = draw_indices(rng, source.len(), k);
    let eps: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let with_pseudo = !cfg.ablation.no_pseudo;
    let (r_out, r_in) = if with_pseudo { (draw_radii(rng, &cfg, k), draw_radii(rng, &cfg, k)) } else { (vec![], vec![]) };

    let x_t = image_batch::<T>(&ti.iter().map(|&i| target.train_image(i)).collect::<Vec<_>>());
    let pred = state.seg.predict_tensor(&state.theta, &x_t)?;
    let src: Vec<&LabeledSample> = si.iter().map(|&i| &source.samples()[i]).collect();
    let x_s = image_batch::<T>(&src.iter().map(|s| &s.image).collect::<Vec<_>>());
    let m_s = mask_batch::<T>(&src.iter().map(|s| &s.mask).collect::<Vec<_>>());
    let (h, w) = (x_s.shape()[2], x_s.shape()[3]);

    let outer = || CriticInputs {
        fake: encode_tensor(&x_t, &pred),
        pseudo: with_pseudo.then(|| {
            let masks = src.iter().zip(&r_out).map(|(s, &r)| dilate_bits(h, w, &s.mask.bits().expect("hard"), r)).collect();
            encode_tensor(&x_s, &bits_batch(masks, h, w))
        }),
        real: encode_tensor(&x_s, &m_s),
    };
    let inner = || CriticInputs {
        fake: encode_tensor(&x_t, &one_minus(&pred)),
        pseudo: with_pseudo.then(|| {
            let masks = src
                .iter()
                .zip(&r_in)
                .map(|(s, &r)| {
                    let bg: Vec<bool> = s.mask.bits().expect("hard").iter().map(|b| !b).collect();
                    match cfg.inner_pseudo {
                        InnerPseudo::Dilate => dilate_bits(h, w, &bg, r),
                        InnerPseudo::Erode => erode_bits(h, w, &bg, r),
                    }
                })
                .collect();
            encode_tensor(&x_s, &bits_batch(masks, h, w))
        }),
        real: encode_tensor(&x_s, &one_minus(&m_s)),
    };
    let step = state.step;
    if cfg.ablation.single_discriminator {
        let (o, i) = (outer(), inner());
        let cat = |a: &Tensor<T>, b: &Tensor<T>| Tensor::cat_channels(&[a, b]);
        let joint = CriticInputs {
            fake: cat(&o.fake, &i.fake),
            pseudo: o.pseudo.as_ref().zip(i.pseudo.as_ref()).map(|(a, b)| cat(a, b)),
            real: cat(&o.real, &i.real),
        };
        let cs = state.outer.as_mut().expect("joint critic");
        (report.critic_outer_total, report.gp_outer) = update_critic(cs, joint, &eps, cfg.lambda_gp, step)?;
    } else {
        if let Some(cs) = state.outer.as_mut() {
            (report.critic_outer_total, report.gp_outer) = update_critic(cs, outer(), &eps, cfg.lambda_gp, step)?;
        }
        if let Some(cs) = state.inner.as_mut() {
            (report.critic_inner_total, report.gp_inner) = update_critic(cs, inner(), &eps, cfg.lambda_gp, step)?;
        }
    }
    Ok(report)
}

fn mean_score<T: Real>(g: &mut Graph<T>, cs: &CriticState<T>, input: Var) -> Var {
    let vars = cs.params.bind(g, false);
    let s = cs.net.forward(g, &vars, input);
    g.mean(s)
}

/// One update of the segmentation network. Critic parameters are read,
/// never written.
pub fn generator_step<T: Real>(state: &mut TrainerState<T>, target: &TargetDataset) -> Result<LossReport> {
    let cfg = state.config.clone();
    let budget = cfg.labeled_budget.resolve(target.train_len());
    if budget > 0 && target.labeled().is_empty() {
        return Err(Error::EmptyDataset("labeled target pool".into()));
    }
    if target.train_len() == 0 {
        return Err(Error::EmptyDataset("target".into()));
    }
    let k = cfg.batch_size;
    let a = cfg.ablation;
    let use_critics = state.outer.is_some() || state.inner.is_some();
    let rng = &mut state.rng;
    let li = if target.labeled().is_empty() { vec![] } else { draw_indices(rng, target.labeled().len(), k) };
    // Without unlabeled images (every sample labeled) the labeled images
    // stand in for the unlabeled batch.
    let pool: Vec<&Image> = if target.unlabeled().is_empty() {
        target.labeled().iter().map(|s| &s.image).collect()
    } else {
        target.unlabeled().iter().collect()
    };
    let ui = draw_indices(rng, pool.len(), k);
    let (transforms, radii): (Vec<AffineTransform>, Vec<usize>) = if a.no_self_sup {
        (vec![], vec![])
    } else {
        let ranges = TransformRanges::default();
        let t = (0..k).map(|_| sample_transform(rng, &ranges)).collect();
        (t, draw_radii(rng, &cfg, k))
    };

    let mut g = Graph::new();
    let vars = state.theta.bind(&mut g, true);
    let net = BoundSegNet { net: &state.seg, params: &vars };
    let mut report = LossReport::default();
    let (mut rec, mut sel_loss, mut scores) = (None, None, Vec::new());

    if !li.is_empty() {
        let labeled: Vec<&LabeledSample> = li.iter().map(|&i| &target.labeled()[i]).collect();
        let x = g.constant(image_batch::<T>(&labeled.iter().map(|s| &s.image).collect::<Vec<_>>()));
        let m = g.constant(mask_batch::<T>(&labeled.iter().map(|s| &s.mask).collect::<Vec<_>>()));
        let p = state.seg.forward(&mut g, &vars, x);
        let r = reconstruction_graph(&mut g, p, m);
        report.rec = value(&g, r);
        rec = Some(r);
    }

    let xu = image_batch::<T>(&ui.iter().map(|&i| pool[i]).collect::<Vec<_>>());
    let mut plain = None;
    if !a.no_self_sup {
        let sel = self_supervised_graph(&mut g, &net, &xu, &transforms, &radii, None);
        report.self_sup = value(&g, sel.loss);
        sel_loss = Some(sel.loss);
        plain = Some(sel.plain_prediction);
    }

    if use_critics {
        let xv = g.constant(xu);
        let m = plain.unwrap_or_else(|| state.seg.forward(&mut g, &vars, xv));
        let outer_in = encode(&mut g, xv, m);
        let inv = g.one_minus(m);
        let inner_in = encode(&mut g, xv, inv);
        if a.single_discriminator {
            let joint = g.cat_channels(&[outer_in, inner_in]);
            let s = mean_score(&mut g, state.outer.as_ref().expect("joint critic"), joint);
            report.adv_outer = value(&g, s);
            scores.push(s);
        } else {
            if let Some(cs) = state.outer.as_ref() {
                let s = mean_score(&mut g, cs, outer_in);
                report.adv_outer = value(&g, s);
                scores.push(s);
            }
            if let Some(cs) = state.inner.as_ref() {
                let s = mean_score(&mut g, cs, inner_in);
                report.adv_inner = value(&g, s);
                scores.push(s);
            }
        }
    }

    let Some(total) = generator_loss_graph(&mut g, rec, sel_loss, &scores, cfg.tau, cfg.eta) else {
        return Ok(report);
    };
    report.gen_total = value(&g, total);
    if !report.gen_total.is_finite() {
        return Err(non_finite(state.step, "generator loss", report.gen_total));
    }
    if g.needs_grad(total) {
        let mut grads = g.backward(total);
        let gs = state.theta.collect_grads(&vars, &mut grads);
        state.adam_theta.update(&mut state.theta, &gs);
    }
    Ok(report)
}

fn check_disjoint(source: &SourceDataset, target: &TargetDataset) -> Result<()> {
    if !source.has_category_metadata() || target.categories().is_empty() {
        return Ok(());
    }
    let src = source.category_set();
    let overlap: Vec<String> = target.categories().iter().filter(|c| src.contains(c)).cloned().collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(Error::CategoryOverlap(overlap))
    }
}

fn audit_budget(cfg: &TrainingConfig, target: &TargetDataset) -> Result<()> {
    let want = cfg.labeled_budget.resolve(target.train_len());
    let have = target.labeled().len();
    if have != want {
        return Err(Error::Config(format!("target has {have} labeled samples but labeled_budget is {want}")));
    }
    Ok(())
}

/// `n_critic` critic steps followed by one generator step.
pub fn outer_step<T: Real>(state: &mut TrainerState<T>, source: &SourceDataset, target: &TargetDataset) -> Result<StepRecord> {
    let mut losses = LossReport::default();
    if state.outer.is_some() || state.inner.is_some() {
        let n = state.config.n_critic;
        for _ in 0..n {
            let r = critic_step(state, source, target)?;
            losses.critic_outer_total += r.critic_outer_total / n as f64;
            losses.critic_inner_total += r.critic_inner_total / n as f64;
            losses.gp_outer += r.gp_outer / n as f64;
            losses.gp_inner += r.gp_inner / n as f64;
        }
    } else {
        check_pools(source, target)?;
    }
    let gen = generator_step(state, target)?;
    losses.rec = gen.rec;
    losses.self_sup = gen.self_sup;
    losses.adv_outer = gen.adv_outer;
    losses.adv_inner = gen.adv_inner;
    losses.gen_total = gen.gen_total;
    state.step += 1;
    if !losses.all_finite() {
        return Err(non_finite(state.step, "loss report", f64::NAN));
    }
    Ok(StepRecord { step: state.step, losses })
}

/// Trains from freshly initialized parameters.
pub fn train<T: Real>(
    source: &SourceDataset,
    target: &TargetDataset,
    cfg: &TrainingConfig,
    hooks: &mut dyn TrainHooks<T>,
) -> Result<TrainerState<T>> {
    check_pools(source, target)?;
    let channels = target.train_image(0).channels();
    let state = TrainerState::new(cfg, channels)?;
    resume(state, source, target, hooks)
}

/// Continues training until `state.config.steps` outer iterations are
/// complete or validation stops improving.
pub fn resume<T: Real>(
    mut state: TrainerState<T>,
    source: &SourceDataset,
    target: &TargetDataset,
    hooks: &mut dyn TrainHooks<T>,
) -> Result<TrainerState<T>> {
    let cfg = state.config.clone();
    if state.step >= cfg.steps {
        return Ok(state);
    }
    check_disjoint(source, target)?;
    audit_budget(&cfg, target)?;
    let (mut best, mut stale) = (f64::NEG_INFINITY, 0u64);
    info!(
        "training {} iterations: {} source, {} labeled, {} unlabeled target samples, ablation {}",
        cfg.steps,
        source.len(),
        target.labeled().len(),
        target.unlabeled().len(),
        cfg.ablation
    );
    while state.step < cfg.steps {
        let record = outer_step(&mut state, source, target)?;
        hooks.on_step(&state, &record)?;
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
            hooks.on_checkpoint(&state)?;
        }
        if cfg.eval_every > 0 && state.step % cfg.eval_every == 0 {
            audit_budget(&cfg, target)?;
            if let Some(score) = hooks.validate(&state) {
                debug!("step {}: validation {score:.4}", state.step);
                if score > best {
                    (best, stale) = (score, 0);
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        info!("early stop at step {}: no improvement in {stale} evaluations", state.step);
                        break;
                    }
                }
            }
        }
    }
    Ok(state)
}
