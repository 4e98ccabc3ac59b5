//! Command-line surface. Flags override the config file only for the
//! subset documented on each flag.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ProfileKind;

#[derive(Debug, Parser)]
#[command(
    name = "corrkit",
    version,
    about = "Simulate hand-over corrections, train timing/placement models, infer goals",
    max_term_width = 100
)]
pub struct Cli {
    /// TOML run configuration; omit for the shipped defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output root; overrides config `output_dir` and CORRKIT_OUT.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads (default: all cores). Results are identical for
    /// any worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (episodes.jsonl + manifest.json).
    Simulate(SimulateArgs),
    /// Export per-timestep features of every episode as CSV.
    Featurize(FeaturizeArgs),
    /// Train the correction-timing model on one percentile set.
    TrainTiming(TrainTimingArgs),
    /// Train the placement MLP and release-residual mixture.
    TrainSpatial(TrainSpatialArgs),
    /// Posterior over candidate goals for one episode.
    Infer(InferArgs),
    /// Multi-split timing and KLD metrics across percentile sets.
    Evaluate(EvaluateArgs),
    /// Retrain with one feature column excluded and report F1 deltas.
    Ablate(AblateArgs),
    /// Mean combined-onset KLD across an alpha grid.
    SweepAlpha(SweepAlphaArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Episode count; overrides config `dataset.n`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Dataset seed; overrides config `dataset.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Intervener/path preset; overrides config `dataset.profile`.
    #[arg(long)]
    pub profile: Option<ProfileKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GoalMode {
    /// Features against the goal the simulated user wanted.
    Intended,
    /// Features against the goal the nominal motion executed.
    Nominal,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Dataset directory (from `simulate`).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Goal hypothesis the features are computed against.
    #[arg(long, value_enum, default_value_t = GoalMode::Intended)]
    pub goal_mode: GoalMode,
}

#[derive(Debug, Args)]
pub struct TrainTimingArgs {
    /// Dataset directory (from `simulate`).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Percentile set (0.7, 0.8, 0.9 or 1.0).
    #[arg(long, default_value_t = 1.0)]
    pub percentile: f64,
    /// Train on the optimality-ratio column alone (the single-feature
    /// baseline) instead of all seven features.
    #[arg(long)]
    pub boltzmann_only: bool,
    /// Split seed; overrides config `splits.base_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainSpatialArgs {
    /// Dataset directory (from `simulate`).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Split seed; overrides config `splits.base_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferModel {
    When,
    WhereOnset,
    WhereRelease,
    CombinedOnset,
    CombinedRelease,
}

impl InferModel {
    pub fn name(self) -> &'static str {
        match self {
            InferModel::When => "when",
            InferModel::WhereOnset => "where-onset",
            InferModel::WhereRelease => "where-release",
            InferModel::CombinedOnset => "combined-onset",
            InferModel::CombinedRelease => "combined-release",
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Dataset directory the episode comes from.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Episode index within the dataset; must be corrected.
    #[arg(long)]
    pub episode: usize,
    /// Posterior model.
    #[arg(long, value_enum)]
    pub model: InferModel,
    /// Timing checkpoint (required by when/combined models).
    #[arg(long)]
    pub timing: Option<PathBuf>,
    /// Placement MLP checkpoint (required by onset-variant WHERE/combined).
    #[arg(long)]
    pub mlp: Option<PathBuf>,
    /// Release mixture checkpoint (required by all WHERE/combined models).
    #[arg(long)]
    pub gmm: Option<PathBuf>,
    /// WHEN weight in the combined models; overrides config `alpha`.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoints to sanity-check against this run before evaluating;
    /// mismatched hashes abort.
    #[arg(long)]
    pub check: Vec<PathBuf>,
    /// Percentile sets to cover (default: all four).
    #[arg(long)]
    pub percentile: Vec<f64>,
    /// Timing split count; overrides config `splits.timing`.
    #[arg(long)]
    pub timing_splits: Option<usize>,
    /// KLD split count; overrides config `splits.kld`.
    #[arg(long)]
    pub kld_splits: Option<usize>,
    /// Skip the KLD half (grid inference dominates the runtime).
    #[arg(long)]
    pub timing_only: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Feature column to exclude: f1..f7, or `dummy-control` for the
    /// constant-8th-column control run.
    #[arg(long)]
    pub feature: String,
    /// Percentile set.
    #[arg(long, default_value_t = 1.0)]
    pub percentile: f64,
    /// Split count; overrides config `splits.timing`.
    #[arg(long)]
    pub splits: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepAlphaArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
}
