use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bkt_core::checkpoint;
use bkt_core::datamodel::{Image, Mask, TrainingConfig};
use bkt_core::datasets::{read_image, write_image, write_mask, SynthSpec};
use bkt_core::trainer::TrainerState;

fn bkt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bkt")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_spec() -> SynthSpec {
    SynthSpec { samples_per_category: 4, target_train: 6, target_eval: 3, image_size: 32, ..SynthSpec::default() }
}

fn small_config() -> TrainingConfig {
    TrainingConfig {
        image_size: 32,
        radius_min: 1,
        radius_max: 7,
        batch_size: 2,
        n_critic: 1,
        seg_widths: vec![4, 8],
        critic_widths: vec![4, 8, 8],
        steps: 3,
        labeled_budget: bkt_core::datamodel::LabeledBudget::Count(2),
        ..TrainingConfig::default()
    }
}

/// Generated benchmark plus a config file, in `dir`.
fn setup(dir: &Path) -> PathBuf {
    fs::write(dir.join("spec.txt"), small_spec().to_text()).unwrap();
    let out = bkt(&["generate-synth", "--spec", s(&dir.join("spec.txt")), "--out", s(&dir.join("data"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = dir.join("train.cfg");
    fs::write(&cfg, small_config().to_text()).unwrap();
    cfg
}

fn train(dir: &Path, cfg: &Path, extra: &[&str]) -> Output {
    let (src, tgt, out) = (dir.join("data/source"), dir.join("data/target"), dir.join("run"));
    let mut args = vec!["train", "--config", s(cfg), "--source", s(&src), "--target", s(&tgt), "--out", s(&out)];
    args.extend_from_slice(extra);
    bkt(&args)
}

fn assert_record(line: &str) {
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    let keys: Vec<&str> = line.trim_matches(|c| c == '{' || c == '}').split(',').map(|kv| kv.split(':').next().unwrap()).collect();
    assert_eq!(keys, ["\"pa\"", "\"mpa\"", "\"miou\"", "\"fwiou\"", "\"pixels\""]);
    for k in ["pa", "mpa", "miou", "fwiou"] {
        let x = v[k].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&x));
        assert_eq!(format!("{x:.2}").parse::<f64>().unwrap(), x);
    }
}

#[test]
fn generate_synth_writes_a_deterministic_tree() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let data = dir.path().join("data");
    for sub in ["source/manifest.tsv", "target/manifest.tsv", "synth.txt"] {
        assert!(data.join(sub).is_file(), "{sub}");
    }
    let again = dir.path().join("again");
    let out = bkt(&["generate-synth", "--spec", s(&dir.path().join("spec.txt")), "--out", s(&again)]);
    assert!(out.status.success());
    let summary = String::from_utf8(out.stdout).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.contains("blob\ttarget\t9"));
    assert_eq!(tree(&data), tree(&again));
    // Regenerating into an earlier output replaces it.
    assert!(bkt(&["generate-synth", "--spec", s(&dir.path().join("spec.txt")), "--out", s(&again)]).status.success());
    assert_eq!(tree(&data), tree(&again));
}

#[test]
fn generate_synth_into_unwritable_location_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let before = tree(dir.path());
    let out = bkt(&["generate-synth", "--out", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(tree(dir.path()), before);
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "families = ellipse\n").unwrap();
    assert_eq!(bkt(&["generate-synth", "--spec", s(&bad), "--out", s(&dir.path().join("o"))]).status.code(), Some(2));
}

#[test]
fn train_then_eval_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = train(dir.path(), &cfg, &["--ablation", "no_inner", "--export-triplets", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let log = fs::read_to_string(run.join("train.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    assert_eq!(records[2]["step"], 3);
    assert_eq!(records[0]["adv_inner"], 0.0);
    for field in ["rec", "self_sup", "adv_outer", "gen_total", "critic_outer_total", "gp_outer"] {
        assert!(records[0][field].is_number(), "{field}");
    }
    assert_eq!(fs::read_dir(run.join("triplets")).unwrap().count(), 6);
    let eval_line = fs::read_to_string(run.join("eval.json")).unwrap();
    assert_record(eval_line.trim());
    let state: TrainerState<f32> = checkpoint::load(&run.join("checkpoint.bkt")).unwrap();
    assert_eq!(state.step, 3);
    assert!(state.inner.is_none());

    let ckpt = run.join("checkpoint.bkt");
    let target = dir.path().join("data/target");
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for f in [&a, &b] {
        let out = bkt(&["eval", "--checkpoint", s(&ckpt), "--data", s(&target), "--out", s(f)]);
        assert!(out.status.success());
        let stdout = String::from_utf8(out.stdout).unwrap();
        assert_record(stdout.lines().next().unwrap());
        assert!(stdout.contains("MIoU"));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let images = dir.path().join("data/target/images");
    let first = fs::read_dir(&images).unwrap().next().unwrap().unwrap().path();
    let black = dir.path().join("black.png");
    write_image(&Image::zeros(3, 40, 40).unwrap(), &black).unwrap();
    let pred = dir.path().join("pred");
    let out = bkt(&["predict", "--checkpoint", s(&ckpt), "--out", s(&pred), "--overlay", s(&first), s(&black)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(&pred).unwrap().count(), 6);
    for stem in [first.file_stem().unwrap().to_str().unwrap(), "black"] {
        let soft = read_image(&pred.join(format!("{stem}_soft.png"))).unwrap();
        let hard = read_image(&pred.join(format!("{stem}_mask.png"))).unwrap();
        for (sv, hv) in soft.plane(0).iter().zip(hard.plane(0)) {
            let raw = (sv * 255.0).round();
            assert_eq!(*hv, if raw >= 128.0 { 1.0 } else { 0.0 });
        }
        assert!(pred.join(format!("{stem}_overlay.png")).is_file());
    }
    let out = bkt(&["predict", "--checkpoint", s(&ckpt), "--out", s(&pred), s(&first), s(&dir.path().join("missing.png"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let text = fs::read_to_string(&cfg).unwrap();
    let trimmed: String = text.lines().filter(|l| !l.starts_with("n_critic")).map(|l| format!("{l}\n")).collect();
    fs::write(&cfg, trimmed).unwrap();
    let out = train(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_critic"));
}

#[test]
fn non_finite_loss_exits_3_and_keeps_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let mut c = small_config();
    c.tau = 1e300;
    fs::write(&cfg, c.to_text()).unwrap();
    let out = train(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let state: TrainerState<f32> = checkpoint::load(&dir.path().join("run/checkpoint.bkt")).unwrap();
    assert_eq!(state.step, 0);
}

#[test]
fn overrides_reach_the_trainer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = train(dir.path(), &cfg, &["--labeled-budget", "all", "--steps", "1", "--seed", "4", "--ablation", "no_outer,no_inner"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let state: TrainerState<f32> = checkpoint::load(&dir.path().join("run/checkpoint.bkt")).unwrap();
    assert_eq!((state.step, state.config.seed), (1, 4));
    assert!(state.outer.is_none() && state.inner.is_none());
    assert_eq!(state.config.labeled_budget, bkt_core::datamodel::LabeledBudget::All);
}

/// A checkpoint whose network outputs `sigmoid(bias)` everywhere.
fn constant_checkpoint(path: &Path, bias: f32) {
    let mut state = TrainerState::<f32>::new(&TrainingConfig { image_size: 16, radius_min: 1, radius_max: 3, ..small_config() }, 3).unwrap();
    let names = state.theta.names().to_vec();
    for (name, t) in names.iter().zip(state.theta.tensors_mut()) {
        let v = if name == "head.b" { bias } else { 0.0 };
        t.data_mut().iter_mut().for_each(|x| *x = v);
    }
    checkpoint::save(&state, path).unwrap();
}

fn labeled_dir(root: &Path, fg: impl Fn(usize, usize) -> bool) {
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("masks")).unwrap();
    for i in 0..3 {
        let x = Image::from_fn(3, 16, 16, |c, y, xx| ((i + c + y + xx) % 5) as f64 / 4.0).unwrap();
        let bits: Vec<bool> = (0..256).map(|k| fg(k / 16, k % 16)).collect();
        write_image(&x, &root.join(format!("images/s{i}.png"))).unwrap();
        write_mask(&Mask::from_bits(16, 16, &bits).unwrap(), &root.join(format!("masks/s{i}.png"))).unwrap();
    }
}

#[test]
fn eval_scores_constant_predictors() {
    let dir = tempfile::tempdir().unwrap();
    let (bg, fg) = (dir.path().join("bg.bkt"), dir.path().join("fg.bkt"));
    constant_checkpoint(&bg, -5.0);
    constant_checkpoint(&fg, 5.0);
    let half = dir.path().join("half");
    labeled_dir(&half, |_, x| x < 8);
    let full = dir.path().join("full");
    labeled_dir(&full, |_, _| true);
    let first_line = |ckpt: &Path, data: &Path| {
        let out = bkt(&["eval", "--checkpoint", s(ckpt), "--data", s(data)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap().lines().next().unwrap().to_string()
    };
    assert_eq!(first_line(&bg, &half), r#"{"pa":50.00,"mpa":50.00,"miou":25.00,"fwiou":25.00,"pixels":768}"#);
    assert_eq!(first_line(&fg, &full), r#"{"pa":100.00,"mpa":100.00,"miou":100.00,"fwiou":100.00,"pixels":768}"#);
    fs::remove_dir_all(full.join("masks")).unwrap();
    assert_eq!(bkt(&["eval", "--checkpoint", s(&fg), "--data", s(&full)]).status.code(), Some(2));
}
