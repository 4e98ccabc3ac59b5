//! Command-line companion to `corrkit-core`: dataset files, model
//! checkpoints, CSV reports, and a thread pool around the grid
//! evaluators. All numerics live in the core crate; this one only
//! moves bytes and schedules work.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod parallel;

use std::path::PathBuf;

use crate::cli::{Cli, Command};
use crate::commands::Ctx;
use crate::config::RunConfig;
use crate::error::Result;

/// Parses the config file (or defaults), folds command flags into it,
/// and dispatches. Returns the files written.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut config, &cli.command);
    config.validate()?;

    let ctx = Ctx::new(config, cli.out.clone());
    match &cli.command {
        Command::Simulate(args) => commands::run_simulate(&ctx, args),
        Command::Featurize(args) => commands::run_featurize(&ctx, args),
        Command::TrainTiming(args) => commands::run_train_timing(&ctx, args),
        Command::TrainSpatial(args) => commands::run_train_spatial(&ctx, args),
        Command::Infer(args) => commands::run_infer(&ctx, args),
        Command::Evaluate(args) => commands::run_evaluate(&ctx, args),
        Command::Ablate(args) => commands::run_ablate(&ctx, args),
        Command::SweepAlpha(args) => commands::run_sweep_alpha(&ctx, args),
    }
}

/// Flags that shadow config fields are folded in before hashing, so the
/// recorded config hash always describes the effective settings.
fn apply_overrides(config: &mut RunConfig, command: &Command) {
    match command {
        Command::Simulate(args) => {
            if let Some(n) = args.n {
                config.dataset.n = n;
            }
            if let Some(seed) = args.seed {
                config.dataset.seed = seed;
            }
            if let Some(profile) = args.profile {
                config.dataset.profile = profile;
            }
        }
        Command::TrainTiming(args) => {
            if let Some(seed) = args.seed {
                config.splits.base_seed = seed;
            }
        }
        Command::TrainSpatial(args) => {
            if let Some(seed) = args.seed {
                config.splits.base_seed = seed;
            }
        }
        Command::Infer(args) => {
            if let Some(alpha) = args.alpha {
                config.alpha = alpha;
            }
        }
        Command::Evaluate(args) => {
            if let Some(n) = args.timing_splits {
                config.splits.timing = n;
            }
            if let Some(n) = args.kld_splits {
                config.splits.kld = n;
            }
        }
        Command::Ablate(args) => {
            if let Some(n) = args.splits {
                config.splits.timing = n;
            }
        }
        Command::Featurize(_) | Command::SweepAlpha(_) => {}
    }
}
