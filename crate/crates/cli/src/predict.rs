use std::fs;
use std::path::{Path, PathBuf};

use bkt_core::checkpoint;
use bkt_core::datamodel::masked_image;
use bkt_core::datasets::{read_image, resize_image, write_image, write_mask};
use bkt_core::trainer::TrainerState;
use log::error;

use crate::render::{hstack, mask_rgb};
use crate::{CmdResult, Failure};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write `input | mask | masked foreground` panels.
    #[arg(long)]
    overlay: bool,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

/// Writes `<stem>_soft.png`, `<stem>_mask.png` and optionally
/// `<stem>_overlay.png` at the model resolution.
fn predict_one(state: &TrainerState<f32>, path: &Path, out: &Path, overlay: bool) -> bkt_core::Result<()> {
    let x = resize_image(&read_image(path)?, state.config.image_size)?;
    let soft = state.predict(&[&x])?.remove(0);
    let hard = soft.binarize(0.5);
    let stem = path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    write_mask(&soft, &out.join(format!("{stem}_soft.png")))?;
    write_mask(&hard, &out.join(format!("{stem}_mask.png")))?;
    if overlay {
        let panel = hstack(&[x.clone(), mask_rgb(&hard)?, masked_image(&x, &hard)?])?;
        write_image(&panel, &out.join(format!("{stem}_overlay.png")))?;
    }
    Ok(())
}

pub fn run(args: Args) -> CmdResult {
    let state: TrainerState<f32> = checkpoint::load(&args.checkpoint)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", args.out.display())))?;
    let mut failed = 0;
    for p in &args.images {
        if let Err(e) = predict_one(&state, p, &args.out, args.overlay) {
            error!("{}: {e}", p.display());
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure::Partial(format!("{failed} of {} images failed", args.images.len())));
    }
    Ok(())
}
