use std::fs;
use std::path::PathBuf;

use bkt_core::checkpoint;
use bkt_core::datasets::load_labeled;
use bkt_core::metrics::{evaluate, ConfusionMatrix};
use bkt_core::trainer::TrainerState;

use crate::{CmdResult, Failure};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory with `images/` and `masks/`.
    #[arg(long)]
    data: PathBuf,
    /// Also write the one-line score record to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// `{"pa":..,"mpa":..,"miou":..,"fwiou":..,"pixels":..}`, scores in percent
/// with two decimals, in that field order.
pub fn record(cm: &ConfusionMatrix) -> Result<String, Failure> {
    let s = cm.scores()?;
    let pct = |v: f64| format!("{:.2}", 100.0 * v);
    Ok(format!(
        "{{\"pa\":{},\"mpa\":{},\"miou\":{},\"fwiou\":{},\"pixels\":{}}}",
        pct(s.pa),
        pct(s.mpa),
        pct(s.miou),
        pct(s.fwiou),
        cm.total()
    ))
}

pub fn table(cm: &ConfusionMatrix) -> Result<String, Failure> {
    let s = cm.scores()?;
    Ok(format!(
        "{:>8} {:>8} {:>8} {:>8}\n{:>8.2} {:>8.2} {:>8.2} {:>8.2}",
        "PA",
        "MPA",
        "MIoU",
        "FWIoU",
        100.0 * s.pa,
        100.0 * s.mpa,
        100.0 * s.miou,
        100.0 * s.fwiou
    ))
}

pub fn run(args: Args) -> CmdResult {
    let state: TrainerState<f32> = checkpoint::load(&args.checkpoint)?;
    let samples = load_labeled(&args.data, state.config.image_size)?;
    if samples.is_empty() {
        return Err(Failure::Usage(format!("{} has no masks to score against", args.data.display())));
    }
    let cm = evaluate(&samples, |x| state.predict(x))?;
    let line = record(&cm)?;
    println!("{line}");
    println!("{}", table(&cm)?);
    if let Some(p) = args.out {
        fs::write(&p, format!("{line}\n")).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
