//! Finite-difference checks of every training objective on a tiny network,
//! 8×8 inputs, double precision.

use bkt_core::losses::{
    critic_objective_graph, generator_loss_graph, penalty_from_gradients, reconstruction_graph,
    self_supervised_graph, CriticInputs, FrozenWeights,
};
use bkt_core::morphology::dilate_bits;
use bkt_core::networks::{Critic, Segmenter};
use bkt_core::transforms::{sample_transform, AffineTransform, TransformRanges};
use bkt_core::triplets::{encode, encode_tensor, interpolate_batch};
use bkt_tensor::{Graph, ParamSet, Tensor};
use rand::Rng;

use super::{flat, max_fd_error, random_bits, random_coords, random_tensor, rng, tiny_params, TinyNet};

pub const SIDE: usize = 8;
pub const BATCH: usize = 2;
pub const COORDS: usize = 50;
pub const STEP: f64 = 1e-6;
pub const LAMBDA: f64 = 10.0;

/// Worst relative error over the sampled coordinates of one loss.
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub coords: usize,
}

struct Fixture {
    x: Tensor<f64>,
    m: Tensor<f64>,
    theta: ParamSet<f64>,
    transforms: Vec<AffineTransform>,
    radii: Vec<usize>,
}

fn fixture(seed: u64) -> Fixture {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[BATCH, 3, SIDE, SIDE]);
    let bits: Vec<f64> = (0..BATCH).flat_map(|_| random_bits(&mut r, SIDE, SIDE, 0.5)).map(|b| b as u8 as f64).collect();
    let m = Tensor::from_vec(&[BATCH, 1, SIDE, SIDE], bits);
    let theta = tiny_params(&mut r, 3);
    let ranges = TransformRanges::default();
    let transforms = (0..BATCH).map(|_| sample_transform(&mut r, &ranges)).collect();
    Fixture { x, m, theta, transforms, radii: vec![1, 2] }
}

fn predict(theta: &ParamSet<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let vars = theta.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = TinyNet { vars: &vars }.forward(&mut g, xv);
    g.value(out).clone()
}

fn frozen_weights(f: &Fixture) -> FrozenWeights<f64> {
    let mut g = Graph::new();
    let vars = f.theta.bind(&mut g, false);
    let out = self_supervised_graph(&mut g, &TinyNet { vars: &vars }, &f.x, &f.transforms, &f.radii, None);
    let w = out.weights;
    assert!(w.plain_branch.sum() > 0.0 && w.warped_branch.sum() > 0.0, "fixture has no boundary band");
    w
}

fn copy_weights(w: &FrozenWeights<f64>) -> FrozenWeights<f64> {
    FrozenWeights { warped_branch: w.warped_branch.clone(), plain_branch: w.plain_branch.clone() }
}

/// Scalar value of `build` on a fresh graph, and optionally its gradient.
fn eval_theta(
    theta: &ParamSet<f64>,
    grad: bool,
    build: &dyn Fn(&mut Graph<f64>, &TinyNet) -> bkt_tensor::Var,
) -> (f64, Vec<f64>) {
    let mut g = Graph::new();
    let vars = theta.bind(&mut g, grad);
    let loss = build(&mut g, &TinyNet { vars: &vars });
    let v = g.value(loss).item();
    if !grad {
        return (v, vec![]);
    }
    let mut grads = g.backward(loss);
    (v, flat(&theta.collect_grads(&vars, &mut grads)))
}

fn check_theta(name: &'static str, seed: u64, theta: &ParamSet<f64>, build: &dyn Fn(&mut Graph<f64>, &TinyNet) -> bkt_tensor::Var) -> Check {
    let (_, analytic) = eval_theta(theta, true, build);
    let coords = random_coords(&mut rng(seed ^ 0xc0), theta.numel(), COORDS);
    let (worst, _) = max_fd_error(theta, &analytic, &coords, STEP, |p| eval_theta(p, false, build).0);
    Check { name, worst, coords: coords.len() }
}

pub fn reconstruction(seed: u64) -> Check {
    let f = fixture(seed);
    let (x, m) = (f.x.clone(), f.m.clone());
    check_theta("rec wrt theta", seed, &f.theta, &move |g, net| {
        let xv = g.constant(x.clone());
        let mv = g.constant(m.clone());
        let p = net.forward(g, xv);
        reconstruction_graph(g, p, mv)
    })
}

pub fn self_supervised(seed: u64) -> Check {
    let f = fixture(seed);
    let w = frozen_weights(&f);
    let (x, t, r) = (f.x.clone(), f.transforms.clone(), f.radii.clone());
    check_theta("sel wrt theta", seed, &f.theta, &move |g, net| {
        self_supervised_graph(g, net, &x, &t, &r, Some(copy_weights(&w))).loss
    })
}

/// Critic inputs for one side from the fixture's prediction.
fn critic_inputs(f: &Fixture, inner: bool, seed: u64) -> (CriticInputs<f64>, Vec<f64>) {
    let mut r = rng(seed ^ 0x1d);
    let pred = predict(&f.theta, &f.x);
    let xs = random_tensor(&mut r, &[BATCH, 3, SIDE, SIDE]);
    let src: Vec<Vec<bool>> = (0..BATCH).map(|_| random_bits(&mut r, SIDE, SIDE, 0.4)).collect();
    let to_tensor = |b: Vec<Vec<bool>>| {
        Tensor::from_vec(&[BATCH, 1, SIDE, SIDE], b.into_iter().flatten().map(|v| v as u8 as f64).collect())
    };
    let flip = |b: &Vec<bool>| b.iter().map(|v| !v).collect::<Vec<_>>();
    let (real, pseudo, fake) = if inner {
        let bg: Vec<Vec<bool>> = src.iter().map(flip).collect();
        let ps = bg.iter().map(|b| dilate_bits(SIDE, SIDE, b, 1)).collect();
        (to_tensor(bg), to_tensor(ps), pred.map(|v| 1.0 - v))
    } else {
        let ps = src.iter().map(|b| dilate_bits(SIDE, SIDE, b, 2)).collect();
        (to_tensor(src), to_tensor(ps), pred)
    };
    let eps = (0..BATCH).map(|_| r.random::<f64>()).collect();
    let inputs = CriticInputs {
        fake: encode_tensor(&f.x, &fake),
        pseudo: Some(encode_tensor(&xs, &pseudo)),
        real: encode_tensor(&xs, &real),
    };
    (inputs, eps)
}

fn clone_inputs(c: &CriticInputs<f64>) -> CriticInputs<f64> {
    CriticInputs { fake: c.fake.clone(), pseudo: c.pseudo.clone(), real: c.real.clone() }
}

fn mean(t: &Tensor<f64>) -> f64 {
    t.data().iter().sum::<f64>() / t.len() as f64
}

/// Critic objective recomputed with plain forward passes.
fn critic_value(critic: &Critic, phi: &ParamSet<f64>, inputs: &CriticInputs<f64>, eps: &[f64]) -> f64 {
    let score = |x: &Tensor<f64>| mean(&critic.score_tensor(phi, x));
    let interp = interpolate_batch(&inputs.real, &inputs.fake, eps);
    let grads = critic.score_and_input_grad(phi, &interp).1;
    let pseudo = inputs.pseudo.as_ref().map_or(0.0, score);
    0.5 * score(&inputs.fake) + 0.5 * pseudo - score(&inputs.real) + penalty_from_gradients(&grads, LAMBDA)
}

pub fn critic(seed: u64, inner: bool) -> Check {
    let f = fixture(seed);
    let (inputs, eps) = critic_inputs(&f, inner, seed);
    let critic = Critic::new(7, vec![3, 4]);
    let phi: ParamSet<f64> = critic.init(&mut rng(seed ^ if inner { 0x11 } else { 0x0 }));
    let mut g = Graph::new();
    let vars = phi.bind(&mut g, true);
    let (loss, _) = critic_objective_graph(&mut g, &critic, &phi, &vars, clone_inputs(&inputs), &eps, LAMBDA);
    let total = g.value(loss).item();
    let direct = critic_value(&critic, &phi, &inputs, &eps);
    assert!((total - direct).abs() < 1e-9 * direct.abs().max(1.0), "objective value {total} vs {direct}");
    let mut grads = g.backward(loss);
    let analytic = flat(&phi.collect_grads(&vars, &mut grads));
    let coords = random_coords(&mut rng(seed ^ 0xc1), phi.numel(), COORDS);
    let (worst, _) = max_fd_error(&phi, &analytic, &coords, STEP, |p| critic_value(&critic, p, &inputs, &eps));
    Check { name: if inner { "inner critic loss wrt phi_inner" } else { "outer critic loss wrt phi_outer" }, worst, coords: coords.len() }
}

pub fn generator(seed: u64) -> Check {
    let f = fixture(seed);
    let w = frozen_weights(&f);
    let outer = Critic::new(7, vec![3, 4]);
    let inner = Critic::new(7, vec![3, 4]);
    let phi_o: ParamSet<f64> = outer.init(&mut rng(seed ^ 0x20));
    let phi_i: ParamSet<f64> = inner.init(&mut rng(seed ^ 0x21));
    let (x, xl, m, t, r) = (f.x.clone(), f.x.map(|v| 1.0 - v), f.m.clone(), f.transforms.clone(), f.radii.clone());
    check_theta("generator loss wrt theta", seed, &f.theta, &move |g, net| {
        let xv = g.constant(xl.clone());
        let mv = g.constant(m.clone());
        let p = net.forward(g, xv);
        let rec = reconstruction_graph(g, p, mv);
        let sel = self_supervised_graph(g, net, &x, &t, &r, Some(copy_weights(&w)));
        let xu = g.constant(x.clone());
        let pm = sel.plain_prediction;
        let outer_in = encode(g, xu, pm);
        let inv = g.one_minus(pm);
        let inner_in = encode(g, xu, inv);
        let vo = phi_o.bind(g, false);
        let vi = phi_i.bind(g, false);
        let so = outer.forward(g, &vo, outer_in);
        let so = g.mean(so);
        let si = inner.forward(g, &vi, inner_in);
        let si = g.mean(si);
        generator_loss_graph(g, Some(rec), Some(sel.loss), &[so, si], 1.0, 1.0).expect("all terms present")
    })
}

pub fn all(seed: u64) -> Vec<Check> {
    vec![reconstruction(seed), self_supervised(seed), critic(seed, false), critic(seed, true), generator(seed)]
}
