//! `cxr-forge`: prepare datasets, train, evaluate, predict and inspect models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cxr_forge::data::Split;

/// Exit status plus the message printed to stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const CONFIG: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERIC: u8 = 3;

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: Self::CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: Self::DATA,
            message: message.into(),
        }
    }
}

impl From<cxr_forge::Error> for Failure {
    fn from(e: cxr_forge::Error) -> Self {
        use cxr_forge::Error as E;
        let code = match e {
            E::NonFinite { .. } | E::NonFiniteLoss { .. } => Self::NUMERIC,
            E::InvalidArgument { .. } | E::ModelConfig { .. } | E::ShapeMismatch { .. } | E::NonScalarLoss(_) => {
                Self::CONFIG
            }
            _ => Self::DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "cxr-forge", version, about = "Chest X-ray triage CNN: prep, train, evaluate, predict, inspect")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Re-encode a `{train,test}/{class}/` image tree as resized JPEGs and write manifest.csv.
    Prep {
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 80)]
        size: usize,
        /// Run config whose `classes` list to use.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model as described by a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on one split of a dataset tree.
    Evaluate {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Directory for confusion.csv and metrics.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run config whose `classes` must match the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print class probabilities for one image.
    Predict { checkpoint: PathBuf, image: PathBuf },
    /// Print the layer table and parameter count of a checkpoint.
    Inspect { checkpoint: PathBuf },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("CXR_FORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::config(format!("CXR_FORGE_THREADS must be a non-negative integer, got `{raw}`")))?;
    cxr_forge::parallel::init_workers(n);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Prep { src, out, size, config } => commands::prep(&src, &out, size, config.as_deref()),
        Command::Train { config, out, seed } => commands::train(&config, out, seed),
        Command::Evaluate {
            checkpoint,
            dataset,
            split,
            out,
            config,
        } => commands::evaluate(&checkpoint, &dataset, split, out, config.as_deref()),
        Command::Predict { checkpoint, image } => commands::predict(&checkpoint, &image),
        Command::Inspect { checkpoint } => commands::inspect(&checkpoint),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors count as configuration errors; --help and --version succeed.
            let code = if e.use_stderr() { Failure::CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
