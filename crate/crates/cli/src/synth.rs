use std::fs;
use std::path::{Path, PathBuf};

use bkt_core::datasets::{write_synthetic, SynthSpec};
use log::info;

use crate::{CmdResult, Failure};

#[derive(clap::Args)]
pub struct Args {
    /// Spec file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory; receives `source/`, `target/` and `synth.txt`.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Refuses to replace anything that is not an earlier generator output.
fn check_replaceable(out: &Path) -> CmdResult {
    if !out.exists() {
        return Ok(());
    }
    let empty = fs::read_dir(out)?.next().is_none();
    if empty || out.join("synth.txt").is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{} exists and was not written by generate-synth", out.display())))
    }
}

pub fn run(args: Args) -> CmdResult {
    let mut spec = match &args.spec {
        Some(p) => SynthSpec::parse(&fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate()?;
    check_replaceable(&args.out)?;

    // Everything is rendered into a sibling temp directory and moved into
    // place at the end, so failures leave no partial tree behind.
    let name = args.out.file_name().ok_or_else(|| Failure::Usage("output path has no final component".into()))?;
    let parent = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::create_dir_all(&tmp).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", tmp.display())))?;
    let counts = match write_synthetic(&spec, &tmp) {
        Ok(c) => c,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e.into());
        }
    };
    if args.out.exists() {
        fs::remove_dir_all(&args.out)?;
    }
    if let Err(e) = fs::rename(&tmp, &args.out) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(Failure::Usage(format!("cannot move output into {}: {e}", args.out.display())));
    }
    info!("wrote {}", args.out.display());
    let target = spec.target_family().to_string();
    for (family, n) in counts {
        let role = if family == target { "target" } else { "source" };
        println!("{family}\t{role}\t{n}");
    }
    Ok(())
}
