//! Declarative run configuration: one versioned TOML tree drives every
//! command, and a hash of the effective config ties outputs together.
//!
//! Flags override only the documented subset (seed, output dir, workers,
//! alpha, percentile, split counts, profile). The hash is computed after
//! overrides, so two runs with the same effective settings share a hash
//! no matter how those settings were spelled.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use corrkit_core::evaluation::KldEvalConfig;
use corrkit_core::features::FeatureConfig;
use corrkit_core::inference::DEFAULT_ALPHA;
use corrkit_core::nn::TrainOptions;
use corrkit_core::simulator::SimProfile;
use corrkit_core::spatial::{GmmOptions, MlpConfig};
use corrkit_core::timing::{
    TimingConfig, DEFAULT_DECISION_THRESHOLD, DEFAULT_LIKELIHOOD_WINDOW,
};

use crate::error::{CliError, Result};

/// Bumped whenever the config or file schemas change incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

/// Named intervener/path presets; the full parameter set is recorded in
/// every dataset manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// Mixed correct/wrong reaches with a hazard over heading and
    /// distance features.
    Default,
    /// Straight reaches where a single feature drives the hazard;
    /// used by the ablation benchmark.
    SingleSignal,
}

impl ProfileKind {
    pub fn resolve(self) -> SimProfile {
        match self {
            ProfileKind::Default => SimProfile::default(),
            ProfileKind::SingleSignal => SimProfile::single_signal(),
        }
    }
}

impl std::str::FromStr for ProfileKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "default" => Ok(ProfileKind::Default),
            "single-signal" => Ok(ProfileKind::SingleSignal),
            other => Err(format!("unknown profile {other:?} (default, single-signal)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n: usize,
    pub seed: u64,
    pub profile: ProfileKind,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { n: 600, seed: 9001, profile: ProfileKind::Default }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub step: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        // 40 x 60 cm around the board at 1 cm; matches GoalGrid::board_default.
        Self { x_min: -0.2, x_max: 0.2, y_min: -0.3, y_max: 0.3, step: 0.01 }
    }
}

impl GridSection {
    pub fn build(&self) -> Result<corrkit_core::inference::GoalGrid> {
        Ok(corrkit_core::inference::GoalGrid::new(
            self.x_min, self.x_max, self.y_min, self.y_max, self.step,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitsSection {
    /// Split count for timing metrics (the study-scale count is larger;
    /// this is the desk-scale default).
    pub timing: usize,
    /// Split count for KLD metrics.
    pub kld: usize,
    pub base_seed: u64,
    /// Cap on scored corrected test episodes per KLD split.
    pub kld_max_episodes: usize,
}

impl Default for SplitsSection {
    fn default() -> Self {
        Self { timing: 20, kld: 10, base_seed: 11, kld_max_episodes: 24 }
    }
}

/// The whole run configuration. Every field has a default, so an empty
/// file (or no file) is the shipped benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Output root; flag and CORRKIT_OUT can override.
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub grid: GridSection,
    pub splits: SplitsSection,
    pub timing: TimingConfig,
    pub timing_train: TrainOptions,
    pub mlp: MlpConfig,
    pub mlp_train: TrainOptions,
    pub gmm: GmmOptions,
    pub features: FeatureConfig,
    pub alpha: f64,
    pub decision_threshold: f64,
    /// Timing-likelihood window in seconds.
    pub window: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            output_dir: None,
            dataset: DatasetSection::default(),
            grid: GridSection::default(),
            splits: SplitsSection::default(),
            timing: TimingConfig::default(),
            timing_train: TrainOptions { max_epochs: 120, ..TrainOptions::default() },
            mlp: MlpConfig::default(),
            mlp_train: TrainOptions { max_epochs: 200, patience: 25, ..TrainOptions::default() },
            gmm: GmmOptions::default(),
            features: FeatureConfig::default(),
            alpha: DEFAULT_ALPHA,
            decision_threshold: DEFAULT_DECISION_THRESHOLD,
            window: DEFAULT_LIKELIHOOD_WINDOW,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "config schema version {} does not match binary schema {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CliError::config("alpha must lie in [0, 1]"));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(CliError::config("decision_threshold must lie in (0, 1)"));
        }
        if self.dataset.n < 50 {
            return Err(CliError::config("dataset.n must be at least 50"));
        }
        if self.splits.timing == 0 || self.splits.kld == 0 {
            return Err(CliError::config("split counts must be positive"));
        }
        Ok(())
    }

    pub fn sim_profile(&self) -> SimProfile {
        self.dataset.profile.resolve()
    }

    /// Hex SHA-256 over the canonical JSON form of the effective config.
    ///
    /// JSON (not the source TOML) so formatting, comments and key order
    /// cannot change the hash; struct field order fixes the key order.
    pub fn hash(&self) -> String {
        let canonical =
            serde_json::to_vec(self).expect("config serialization cannot fail");
        let mut hasher = Sha256::new();
        hasher.update(&canonical);
        hex(&hasher.finalize())
    }

    /// Hash with fields that never influence training canonicalized
    /// away. Checkpoints store and check this one, so retuning `alpha`
    /// or moving the output root does not orphan trained models.
    pub fn model_hash(&self) -> String {
        let mut canon = self.clone();
        canon.alpha = DEFAULT_ALPHA;
        canon.output_dir = None;
        canon.hash()
    }

    /// KLD evaluation settings assembled from the config sections.
    pub fn kld_eval_config(&self, pct: f64) -> KldEvalConfig {
        KldEvalConfig {
            pct,
            alpha: self.alpha,
            n_splits: self.splits.kld,
            base_seed: self.splits.base_seed,
            max_episodes: self.splits.kld_max_episodes,
            window: self.window,
            timing: self.timing.clone(),
            timing_options: self.timing_train.clone(),
            mlp: self.mlp.clone(),
            mlp_options: self.mlp_train.clone(),
            gmm: self.gmm.clone(),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// SHA-256 hex digest of raw bytes; used for dataset and episode files.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn empty_toml_is_the_default_config() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn hash_changes_with_any_field() {
        let base = RunConfig::default().hash();
        let mut cfg = RunConfig::default();
        cfg.dataset.seed += 1;
        assert_ne!(cfg.hash(), base);
        let mut cfg = RunConfig::default();
        cfg.alpha = 0.5;
        assert_ne!(cfg.hash(), base);
    }

    #[test]
    fn model_hash_ignores_inference_only_fields() {
        let base = RunConfig::default();
        let mut tuned = RunConfig::default();
        tuned.alpha = 0.3;
        tuned.output_dir = Some(PathBuf::from("elsewhere"));
        assert_ne!(tuned.hash(), base.hash());
        assert_eq!(tuned.model_hash(), base.model_hash());

        let mut retrained = RunConfig::default();
        retrained.dataset.seed += 1;
        assert_ne!(retrained.model_hash(), base.model_hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("nonexistent_knob = 3").unwrap_err();
        assert!(err.to_string().contains("nonexistent_knob"));
    }

    #[test]
    fn schema_version_is_checked() {
        let cfg: RunConfig = toml::from_str("schema_version = 99").unwrap();
        assert!(cfg.validate().is_err());
    }
}
