//! Command-line front end: `train`, `predict`, `evaluate`, `augment-preview`
//! and `make-phantoms`.

pub mod commands;
pub mod config;
pub mod error;
pub mod imaging;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::phantoms::PhantomSet;
use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "femseg", version, about = "Proximal femur segmentation of CT volumes with a 3D u-net")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a configuration value, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Case-level worker threads.
    #[arg(long, env = config::WORKERS_ENV)]
    pub workers: Option<usize>,
}

impl Common {
    fn load(&self, seed: Option<u64>) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(&self.config, &self.overrides)?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on the manifest's train split, validating on `val`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Segment the manifest cases in the configured splits.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score predictions against ground truth and write a metrics report.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Write slices of one case before and after a random augmentation.
    AugmentPreview {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Case id; defaults to the first training case.
        #[arg(long)]
        case: Option<String>,
    },
    /// Generate a synthetic ellipsoid dataset with a manifest and a starter config.
    MakePhantoms {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        train: usize,
        #[arg(long, default_value_t = 2)]
        val: usize,
        #[arg(long, default_value_t = 2)]
        test: usize,
        /// Cube edge length in voxels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Runs one command and returns a short human-readable summary.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Train { common, seed } => {
            let cfg = common.load(seed)?;
            let r = commands::train::run(&cfg)?;
            Ok(format!(
                "history {}\nfinal checkpoint {}\nbest checkpoint {} (epoch {})",
                r.history.display(),
                r.final_checkpoint.display(),
                r.best_checkpoint.display(),
                r.best_epoch
            ))
        }
        Command::Predict { common, checkpoint } => {
            let cfg = common.load(None)?;
            let r = commands::predict::run(&cfg, checkpoint.as_deref())?;
            let mut out = format!("{} masks, timing in {}", r.masks.len(), r.timing_file.display());
            for t in &r.timing {
                out.push_str(&format!("\n{} {}: {:.2} s", t.case_id, t.side, t.seconds));
            }
            Ok(out)
        }
        Command::Evaluate { common } => {
            let cfg = common.load(None)?;
            let r = commands::evaluate::run(&cfg)?;
            let text = std::fs::read_to_string(&r.metrics_file).unwrap_or_default();
            Ok(format!("{text}report {}", r.metrics_file.display()))
        }
        Command::AugmentPreview { common, seed, case } => {
            let cfg = common.load(seed)?;
            let seed = cfg.seed;
            let r = commands::preview::run(&cfg, seed, case.as_deref())?;
            Ok(format!(
                "case {} slice {}: {:?}\n{} files in {}",
                r.case_id,
                r.slice,
                r.trace,
                r.files.len(),
                cfg.output_dir.join("preview").display()
            ))
        }
        Command::MakePhantoms { out, train, val, test, size, seed } => {
            let cfg = commands::phantoms::run(&out, PhantomSet { train, val, test, size, seed })?;
            Ok(format!("dataset and starter config at {}", cfg.display()))
        }
    }
}
