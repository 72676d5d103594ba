use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bkt_core::checkpoint;
use bkt_core::datamodel::{scaled_radius_range, InnerPseudo, LabeledBudget, LabeledSample, TargetDataset, TrainingConfig};
use bkt_core::datasets::{load_source, load_target, write_image};
use bkt_core::metrics::evaluate;
use bkt_core::trainer::{resume, StepRecord, TrainHooks, TrainerState};
use bkt_core::triplets::{fake_inner, fake_outer, pseudo_inner, pseudo_outer, real_inner, real_outer};
use bkt_core::{Error, Result};
use log::{info, warn};

use crate::render::triplet_panel;
use crate::score::{record, table};
use crate::{CmdResult, Failure};

#[derive(clap::Args)]
pub struct Args {
    /// Config file with every training field as `key = value`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Receives `train.jsonl`, `checkpoint.bkt` and `eval.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of labeled target samples, or `all`.
    #[arg(long)]
    labeled_budget: Option<String>,
    /// Comma-separated ablation flags, or `none`.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    /// Overrides the resolution; the radius range is rescaled with it.
    #[arg(long)]
    image_size: Option<usize>,
    /// Write this many triplet panels per side and kind to `triplets/`
    /// before training.
    #[arg(long, value_name = "N")]
    export_triplets: Option<usize>,
}

fn load_config(args: &Args) -> Result<TrainingConfig> {
    let text = fs::read_to_string(&args.config).map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = TrainingConfig::parse(&text)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(b) = &args.labeled_budget {
        cfg.set("labeled_budget", b)?;
    }
    if let Some(a) = &args.ablation {
        cfg.set("ablation", a)?;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(size) = args.image_size {
        cfg.image_size = size;
        (cfg.radius_min, cfg.radius_max) = scaled_radius_range(size);
        info!("image size {size}: radius range rescaled to {}..={}", cfg.radius_min, cfg.radius_max);
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Hooks {
    log: BufWriter<File>,
    checkpoint: PathBuf,
    eval: Vec<LabeledSample>,
}

impl TrainHooks<f32> for Hooks {
    fn on_step(&mut self, _: &TrainerState<f32>, r: &StepRecord) -> Result<()> {
        serde_json::to_writer(&mut self.log, r)?;
        self.log.write_all(b"\n")?;
        self.log.flush()?;
        if r.step % 50 == 0 {
            let l = &r.losses;
            info!("step {}: rec {:.4} sel {:.4} gen {:.4}", r.step, l.rec, l.self_sup, l.gen_total);
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainerState<f32>) -> Result<()> {
        checkpoint::save(state, &self.checkpoint)
    }

    fn validate(&mut self, state: &TrainerState<f32>) -> Option<f64> {
        if self.eval.is_empty() {
            return None;
        }
        let cm = evaluate(&self.eval, |x| state.predict(x)).ok()?;
        let miou = cm.scores().ok()?.miou;
        info!("step {}: validation MIoU {:.2}", state.step, 100.0 * miou);
        Some(miou)
    }
}

/// Panels of every triplet kind for the first `n` source/target pairs,
/// built from the untrained network.
fn export_triplets(state: &TrainerState<f32>, source: &bkt_core::datamodel::SourceDataset, target: &TargetDataset, n: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg = &state.config;
    let r = (cfg.radius_min + cfg.radius_max) / 2;
    for i in 0..n.min(source.len()).min(target.train_len()) {
        let s = &source.samples()[i];
        let x = target.train_image(i);
        let pred = state.predict(&[x])?.remove(0);
        let panels = [
            ("outer_real", real_outer(&s.image, &s.mask)?),
            ("outer_pseudo", pseudo_outer(&s.image, &s.mask, r)?),
            ("outer_fake", fake_outer(x, &pred)?),
            ("inner_real", real_inner(&s.image, &s.mask)?),
            ("inner_pseudo", pseudo_inner(&s.image, &s.mask, r, cfg.inner_pseudo)?),
            ("inner_fake", fake_inner(x, &pred)?),
        ];
        for (name, t) in panels {
            write_image(&triplet_panel(&t)?, &dir.join(format!("{i:03}_{name}.png")))?;
        }
    }
    Ok(())
}

pub fn run(args: Args) -> CmdResult {
    let cfg = load_config(&args)?;
    if cfg.inner_pseudo == InnerPseudo::Erode {
        info!("inner pseudo masks use erosion of the background");
    }
    fs::create_dir_all(&args.out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", args.out.display())))?;
    let source = load_source(&args.source, cfg.image_size)?;
    let budget = match cfg.labeled_budget {
        LabeledBudget::All => None,
        LabeledBudget::Count(n) => Some(n),
    };
    let target = load_target(&args.target, cfg.image_size, budget, cfg.seed)?;
    info!(
        "source {} samples; target {} labeled, {} unlabeled, {} eval",
        source.len(),
        target.labeled().len(),
        target.unlabeled().len(),
        target.evaluation().len()
    );
    let channels = target.train_image(0).channels();
    let state = TrainerState::<f32>::new(&cfg, channels)?;
    if let Some(n) = args.export_triplets {
        export_triplets(&state, &source, &target, n, &args.out.join("triplets"))?;
    }
    fs::write(args.out.join("config.txt"), cfg.to_text())?;
    let ckpt = args.out.join("checkpoint.bkt");
    // The initial state is the first "last good" checkpoint.
    checkpoint::save(&state, &ckpt)?;
    let mut hooks = Hooks {
        log: BufWriter::new(File::create(args.out.join("train.jsonl"))?),
        checkpoint: ckpt.clone(),
        eval: target.evaluation().to_vec(),
    };
    let state = match resume(state, &source, &target, &mut hooks) {
        Ok(s) => s,
        Err(e @ Error::NonFinite { .. }) => {
            return Err(Failure::Numeric(format!("{e}; last good checkpoint kept at {}", ckpt.display())));
        }
        Err(e) => return Err(e.into()),
    };
    checkpoint::save(&state, &ckpt)?;
    if target.evaluation().is_empty() {
        warn!("target has no evaluation split; skipping the final evaluation");
        return Ok(());
    }
    let cm = evaluate(target.evaluation(), |x| state.predict(x))?;
    let line = record(&cm)?;
    fs::write(args.out.join("eval.json"), format!("{line}\n"))?;
    println!("{line}");
    println!("{}", table(&cm)?);
    Ok(())
}
