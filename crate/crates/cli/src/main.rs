//! `bkt`: synthetic data generation, adversarial few-shot training,
//! evaluation and prediction.
//!
//! Exit codes: 0 success, 1 partial failure, 2 usage or configuration
//! error, 3 numerical failure during training.

mod predict;
mod render;
mod score;
mod synth;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bkt", version, about = "Boundary knowledge translation for few-shot foreground segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the procedural benchmark (source families + held-out target family).
    GenerateSynth(synth::Args),
    /// Train a segmentation network with boundary critics.
    Train(train::Args),
    /// Score a checkpoint on a labeled dataset directory.
    Eval(score::Args),
    /// Write soft/hard masks (and optional overlays) for images.
    Predict(predict::Args),
}

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Partial(String),
    Usage(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Partial(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Partial(m) | Failure::Usage(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<bkt_core::Error> for Failure {
    fn from(e: bkt_core::Error) -> Self {
        match e {
            bkt_core::Error::NonFinite { .. } => Failure::Numeric(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateSynth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => score::run(a),
        Command::Predict(a) => predict::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
