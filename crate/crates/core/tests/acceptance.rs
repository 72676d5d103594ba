//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `BKT_ACCEPTANCE=1,2,5` runs a subset (criterion 8 reuses the runs of 7).

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use bkt_core::datamodel::{Ablations, LabeledBudget, Mask, SourceDataset, TargetDataset, TrainingConfig};
use bkt_core::datasets::{generate_synthetic, restrict_labels, SynthSpec};
use bkt_core::losses::{gradient_penalty, samplers, self_supervised_graph, self_supervised_loss, warp_tensor, InputGradient};
use bkt_core::metrics::{evaluate, ConfusionMatrix};
use bkt_core::morphology::{dilate, erode, weight_map, BinaryGrid, DiskStrel};
use bkt_core::networks::{BoundSegNet, SegNet};
use bkt_core::trainer::{critic_step, generator_step, resume, train, NoHooks, StepRecord, TrainHooks, TrainerState};
use bkt_core::transforms::{sample_transform, AffineTransform, TransformRanges};
use bkt_core::{checkpoint, datamodel::scaled_radius_range};
use bkt_tensor::{Graph, ParamSet, Tensor};
use common::{
    bits_of, blobby_bits, checks, mask, oracle_dilate, oracle_erode, oracle_scores, oracle_weight, random_bits,
    random_tensor, rng, soft_disks, EquivariantOracle,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn morphology() -> Outcome {
    let side = 32;
    let mut r = rng(1);
    let radii = [1, 2, 3, 5];
    for case in 0..500 {
        let bits = if case % 2 == 0 {
            let density = r.random_range(0.05..0.95);
            random_bits(&mut r, side, side, density)
        } else {
            blobby_bits(&mut r, side, side)
        };
        let m = mask(&bits, side, side);
        for &rad in &radii {
            let fail = |what: &str| format!("mask {case}, r={rad}: {what} differs from the oracle");
            ensure(bits_of(&dilate(&m, rad).unwrap()) == oracle_dilate(&bits, side, side, rad), || fail("dilate"))?;
            ensure(bits_of(&erode(&m, rad).unwrap()) == oracle_erode(&bits, side, side, rad), || fail("erode"))?;
            ensure(bits_of(&weight_map(&m, rad).unwrap()) == oracle_weight(&bits, side, side, rad), || fail("weight map"))?;
            let disk = DiskStrel::new(rad);
            let g = BinaryGrid::new(side, side, bits.clone());
            ensure(g.erode(&disk) == g.complement().dilate(&disk).complement(), || fail("erode/dilate duality"))?;
        }
    }
    Ok("500 masks × r ∈ {1,2,3,5} bit-equal; duality exact".into())
}

fn metrics() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = 1 + case % 3;
        let mut pairs = Vec::new();
        for _ in 0..n {
            // Every few cases one class is absent from the ground truth.
            let gt_density = match case % 10 {
                0 => 0.0,
                1 => 1.0,
                _ => r.random_range(0.1..0.9),
            };
            let gt = mask(&random_bits(&mut r, 8, 8, gt_density), 8, 8);
            let soft: Vec<f64> = (0..64).map(|_| r.random::<f64>()).collect();
            pairs.push((Mask::soft(8, 8, soft).unwrap(), gt));
        }
        let mut cm = ConfusionMatrix::new();
        for (p, g) in &pairs {
            cm.accumulate(p, g, 0.5).map_err(|e| e.to_string())?;
        }
        let s = cm.scores().map_err(|e| e.to_string())?;
        let refs: Vec<(&Mask, &Mask)> = pairs.iter().map(|(p, g)| (p, g)).collect();
        let o = oracle_scores(&refs);
        for (a, b) in [(s.pa, o.pa), (s.mpa, o.mpa), (s.miou, o.miou), (s.fwiou, o.fwiou)] {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("worst deviation {worst:.3e}"))?;
    Ok(format!("200 cases, worst deviation {worst:.1e}"))
}

struct Linear(Vec<f64>);

impl InputGradient for Linear {
    fn input_gradients(&self, x: &Tensor<f64>) -> Tensor<f64> {
        let n = x.shape()[0];
        Tensor::from_vec(x.shape(), (0..n).flat_map(|_| self.0.iter().copied()).collect())
    }
}

fn penalty() -> Outcome {
    let mut r = rng(3);
    let dim = 7 * 64 * 64;
    let raw = random_tensor(&mut r, &[dim]).into_vec();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit = Linear(raw.iter().map(|v| v / norm).collect());
    let constant = Linear(vec![0.0; dim]);
    let x = random_tensor(&mut r, &[4, 7, 64, 64]);
    let (pu, pc) = (gradient_penalty(&unit, &x, 10.0), gradient_penalty(&constant, &x, 10.0));
    ensure(pu < 1e-6, || format!("unit-norm linear critic: {pu:.3e}"))?;
    ensure((pc - 10.0).abs() < 1e-6, || format!("constant critic: {pc}"))?;
    Ok(format!("unit linear {pu:.1e}, constant {pc}"))
}

fn gradients() -> Outcome {
    let mut lines = Vec::new();
    for seed in [3, 17] {
        for c in checks::all(seed) {
            ensure(c.coords >= checks::COORDS, || format!("{}: {} coordinates", c.name, c.coords))?;
            ensure(c.worst < 1e-4, || format!("seed {seed}, {}: relative error {:.3e}", c.name, c.worst))?;
            if seed == 3 {
                lines.push(format!("{} {:.1e}", c.name, c.worst));
            }
        }
    }
    Ok(lines.join(", "))
}

fn equivariance() -> Outcome {
    let net = SegNet::new(3, vec![4, 8]);
    let params: ParamSet<f64> = net.init(&mut rng(1));
    let x = random_tensor(&mut rng(2), &[2, 3, 32, 32]);
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let id = vec![AffineTransform::IDENTITY; 2];
    let out = self_supervised_graph(&mut g, &BoundSegNet { net: &net, params: &vars }, &x, &id, &[3, 5], None);
    let identity = g.value(out.loss).item();
    ensure(identity < 1e-12, || format!("identity transform: {identity:.3e}"))?;

    let side = 64;
    let mut r = rng(4);
    let ranges = TransformRanges::default();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let transforms: Vec<AffineTransform> = (0..2).map(|_| sample_transform(&mut r, &ranges)).collect();
        let plain = soft_disks(2, side, &[(30.0, 34.0, 7.0), (36.0, 28.0, 10.0)]);
        let x = random_tensor(&mut r, &[2, 3, side, side]);
        let oracle = EquivariantOracle {
            plain_input: x.clone(),
            warped: warp_tensor(&plain, samplers(&transforms, side, side)),
            plain,
        };
        worst = worst.max(self_supervised_loss(&oracle, &x, &transforms, &[9, 13]));
    }
    ensure(worst < 1e-3, || format!("equivariant oracle: {worst:.3e}"))?;
    Ok(format!("identity {identity:.1e}, equivariant oracle worst {worst:.1e} over 20 draws"))
}

#[derive(Default)]
struct Recorder(Vec<String>);

impl TrainHooks<f32> for Recorder {
    fn on_step(&mut self, _: &TrainerState<f32>, r: &StepRecord) -> bkt_core::Result<()> {
        self.0.push(serde_json::to_string(r).unwrap());
        Ok(())
    }
}

fn contract() -> Outcome {
    let spec = SynthSpec { samples_per_category: 8, target_train: 16, target_eval: 4, image_size: 32, ..SynthSpec::default() };
    let (source, target) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let target = restrict_labels(&target, 4, 7).map_err(|e| e.to_string())?;
    let cfg = TrainingConfig {
        image_size: 32,
        radius_min: 1,
        radius_max: 7,
        batch_size: 4,
        n_critic: 3,
        seg_widths: vec![4, 8],
        critic_widths: vec![4, 8, 8],
        steps: 20,
        seed: 5,
        labeled_budget: LabeledBudget::Count(4),
        ..TrainingConfig::default()
    };
    let mut state = TrainerState::<f32>::new(&cfg, 3).map_err(|e| e.to_string())?;
    for step in 0..20 {
        for _ in 0..cfg.n_critic {
            let before = state.fingerprints();
            critic_step(&mut state, &source, &target).map_err(|e| e.to_string())?;
            let after = state.fingerprints();
            ensure(before.0 == after.0, || format!("step {step}: a critic update changed θ"))?;
        }
        let before = state.fingerprints();
        generator_step(&mut state, &target).map_err(|e| e.to_string())?;
        let after = state.fingerprints();
        ensure((before.1, before.2) == (after.1, after.2), || format!("step {step}: a generator update changed a critic"))?;
        state.step += 1;
    }

    let (mut a, mut b) = (Recorder::default(), Recorder::default());
    let sa = train(&source, &target, &cfg, &mut a).map_err(|e| e.to_string())?;
    let sb = train(&source, &target, &cfg, &mut b).map_err(|e| e.to_string())?;
    ensure(a.0 == b.0 && sa == sb, || "seeded rerun diverged".into())?;

    let mut first = Recorder::default();
    let half = train(&source, &target, &TrainingConfig { steps: 10, ..cfg.clone() }, &mut first).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("mid.bkt");
    checkpoint::save(&half, &path).map_err(|e| e.to_string())?;
    let mut loaded: TrainerState<f32> = checkpoint::load(&path).map_err(|e| e.to_string())?;
    ensure(loaded == half, || "checkpoint load differs from the saved state".into())?;
    loaded.config.steps = 20;
    let mut second = Recorder::default();
    let resumed = resume(loaded, &source, &target, &mut second).map_err(|e| e.to_string())?;
    first.0.extend(second.0);
    ensure(first.0 == a.0, || "resumed loss trajectory differs".into())?;
    ensure(resumed.fingerprints() == sa.fingerprints(), || "resumed parameters differ".into())?;
    Ok("20 steps: hash audit clean, rerun and mid-run checkpoint bit-exact".into())
}

/// Desk-scale benchmark runs shared by criteria 7 and 8.
struct Desk {
    source: SourceDataset,
    target: TargetDataset,
    runs: BTreeMap<&'static str, f64>,
}

fn desk_config(budget: LabeledBudget, ablation: Ablations) -> TrainingConfig {
    let size = 64;
    let (radius_min, radius_max) = scaled_radius_range(size);
    TrainingConfig {
        image_size: size,
        radius_min,
        radius_max,
        batch_size: 8,
        adam_alpha: DESK_ALPHA,
        tau: DESK_TAU,
        eta: DESK_TAU,
        seg_widths: vec![8, 16, 32, 64],
        critic_widths: vec![8, 16, 32, 64, 64],
        steps: DESK_STEPS,
        labeled_budget: budget,
        ablation,
        ..TrainingConfig::default()
    }
}

// Losses are pixel means, so τ = η are scaled up to keep reconstruction and
// equivariance on par with the critic scores; the larger step size stands in
// for a long schedule.
const DESK_TAU: f64 = 256.0;
const DESK_ALPHA: f64 = 1e-3;
const DESK_STEPS: u64 = 600;
const DESK_SEEDS: [u64; 2] = [0, 1];

impl Desk {
    fn new() -> Result<Self, String> {
        let spec = SynthSpec::default();
        let (source, target) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        Ok(Self { source, target, runs: BTreeMap::new() })
    }

    /// Eval MIoU of one arm, averaged over `DESK_SEEDS`.
    fn miou(&mut self, name: &'static str, budget: LabeledBudget, ablation: Ablations) -> Result<f64, String> {
        if let Some(&v) = self.runs.get(name) {
            return Ok(v);
        }
        let t0 = Instant::now();
        let mut per_seed = Vec::new();
        for seed in DESK_SEEDS {
            let cfg = TrainingConfig { seed, ..desk_config(budget, ablation) };
            let n = budget.resolve(self.target.train_len());
            let target = restrict_labels(&self.target, n, seed).map_err(|e| e.to_string())?;
            let state: TrainerState<f32> =
                train(&self.source, &target, &cfg, &mut NoHooks).map_err(|e| format!("{name}, seed {seed}: {e}"))?;
            let cm = evaluate(target.evaluation(), |x| state.predict(x)).map_err(|e| e.to_string())?;
            per_seed.push(cm.scores().map_err(|e| e.to_string())?.miou);
        }
        let v = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let detail: Vec<String> = per_seed.iter().map(|m| format!("{:.2}", 100.0 * m)).collect();
        println!("    {name:<10} MIoU {:.2}  (seeds {}; {:.0}s)", 100.0 * v, detail.join(", "), t0.elapsed().as_secs_f64());
        self.runs.insert(name, v);
        Ok(v)
    }
}

fn full() -> Ablations {
    Ablations::none()
}

fn ablated(f: impl FnOnce(&mut Ablations)) -> Ablations {
    let mut a = Ablations::none();
    f(&mut a);
    a
}

fn end_to_end(desk: &mut Desk) -> Outcome {
    let all = desk.miou("T(all)", LabeledBudget::All, full())?;
    let t10 = desk.miou("T(10)", LabeledBudget::Count(10), full())?;
    let base = desk.miou("baseline", LabeledBudget::Count(10), ablated(|a| (a.no_outer, a.no_inner) = (true, true)))?;
    let one = desk.miou("oneD", LabeledBudget::Count(10), ablated(|a| a.single_discriminator = true))?;
    let t0 = desk.miou("T(0)", LabeledBudget::Count(0), full())?;
    let mut failures = Vec::new();
    if all < 0.90 {
        failures.push(format!("T(all) {:.2} < 90", 100.0 * all));
    }
    if t10 < 0.80 {
        failures.push(format!("T(10) {:.2} < 80", 100.0 * t10));
    }
    for (name, v) in [("baseline", base), ("oneD", one), ("T(0)", t0)] {
        if t10 - v < 0.03 {
            failures.push(format!("T(10) − {name} = {:.2} < 3", 100.0 * (t10 - v)));
        }
    }
    let summary = format!(
        "T(all) {:.2}, T(10) {:.2}, baseline {:.2}, oneD {:.2}, T(0) {:.2}",
        100.0 * all,
        100.0 * t10,
        100.0 * base,
        100.0 * one,
        100.0 * t0
    );
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}: {}", failures.join("; ")))
    }
}

fn monotonicity(desk: &mut Desk) -> Outcome {
    let mut seq = Vec::new();
    for (name, budget) in [
        ("T(0)", LabeledBudget::Count(0)),
        ("T(5)", LabeledBudget::Count(5)),
        ("T(10)", LabeledBudget::Count(10)),
        ("T(50)", LabeledBudget::Count(50)),
        ("T(all)", LabeledBudget::All),
    ] {
        seq.push((name, desk.miou(name, budget, full())?));
    }
    let summary: Vec<String> = seq.iter().map(|(n, v)| format!("{n} {:.2}", 100.0 * v)).collect();
    let summary = summary.join(" → ");
    for w in seq.windows(2) {
        if w[1].1 < w[0].1 - 0.01 {
            return Err(format!("{summary}: {} drops below {} by {:.2}", w[1].0, w[0].0, 100.0 * (w[0].1 - w[1].1)));
        }
    }
    Ok(summary)
}

fn main() -> ExitCode {
    let selected: Option<Vec<u32>> =
        std::env::var("BKT_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |i: u32| selected.as_ref().is_none_or(|s| s.contains(&i));
    let mut desk: Option<Desk> = None;
    let mut failed = 0;
    let names = [
        "morphology oracle",
        "metrics oracle",
        "gradient penalty analytic cases",
        "loss gradients vs finite differences",
        "self-supervision equivariance",
        "training loop contract",
        "end-to-end desk benchmark",
        "labeled-budget monotonicity",
    ];
    for (i, name) in names.iter().enumerate() {
        let id = i as u32 + 1;
        if !wanted(id) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = match id {
            1 => morphology(),
            2 => metrics(),
            3 => penalty(),
            4 => gradients(),
            5 => equivariance(),
            6 => contract(),
            _ => {
                if desk.is_none() {
                    match Desk::new() {
                        Ok(d) => desk = Some(d),
                        Err(e) => {
                            println!("FAIL {id} {name}: cannot build the benchmark: {e}");
                            failed += 1;
                            continue;
                        }
                    }
                }
                let d = desk.as_mut().unwrap();
                if id == 7 {
                    end_to_end(d)
                } else {
                    monotonicity(d)
                }
            }
        };
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
