//! Model checkpoints: self-describing JSON with the model config,
//! normalization statistics, flat decimal weight arrays and seeds.
//!
//! Decimal, not base-64: serde_json prints the shortest representation
//! that parses back to the identical double, so reload is bit-exact and
//! the files stay diffable. Every checkpoint also records the config and
//! dataset hashes of the run that trained it; `evaluate` refuses
//! checkpoints whose hashes do not match its inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use corrkit_core::features::FeatureColumn;
use corrkit_core::spatial::{GmmModel, MlpConfig, MlpModel};
use corrkit_core::timing::{TimingConfig, TimingModel};

use crate::config::SCHEMA_VERSION;
use crate::error::{CliError, Result};
use crate::io::atomic::{read_string, write_atomic};

/// Provenance block shared by all checkpoint kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    /// Training-scoped config hash (`RunConfig::model_hash`).
    pub config_hash: String,
    pub dataset_sha256: String,
    /// Split seed the training split was drawn with.
    pub split_seed: u64,
    /// Seed the trainer itself consumed.
    pub train_seed: u64,
}

impl Provenance {
    pub fn check_against(&self, config_hash: &str, dataset_sha256: &str) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "checkpoint schema version {} does not match binary schema {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.config_hash != config_hash {
            return Err(CliError::config(format!(
                "checkpoint config hash {} does not match run config {config_hash}",
                self.config_hash
            )));
        }
        if self.dataset_sha256 != dataset_sha256 {
            return Err(CliError::config(format!(
                "checkpoint dataset digest {} does not match dataset {dataset_sha256}",
                self.dataset_sha256
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingCheckpoint {
    pub kind: String,
    pub provenance: Provenance,
    /// Percentile set the training split was drawn from.
    pub percentile: f64,
    /// Input columns in order; length matches `config.input_dim`.
    pub columns: Vec<FeatureColumn>,
    pub config: TimingConfig,
    pub feat_mean: Vec<f64>,
    pub feat_std: Vec<f64>,
    pub weights: Vec<f64>,
    pub model_seed: u64,
}

pub const TIMING_KIND: &str = "timing";
pub const MLP_KIND: &str = "placement-mlp";
pub const GMM_KIND: &str = "release-gmm";

impl TimingCheckpoint {
    pub fn from_model(
        model: &TimingModel,
        provenance: Provenance,
        percentile: f64,
        columns: Vec<FeatureColumn>,
    ) -> Self {
        TimingCheckpoint {
            kind: TIMING_KIND.to_string(),
            provenance,
            percentile,
            columns,
            config: model.config.clone(),
            feat_mean: model.feat_mean.clone(),
            feat_std: model.feat_std.clone(),
            weights: model.params.flatten(),
            model_seed: model.seed,
        }
    }

    pub fn into_model(&self) -> Result<TimingModel> {
        if self.kind != TIMING_KIND {
            return Err(CliError::config(format!(
                "expected a {TIMING_KIND} checkpoint, found kind {:?}",
                self.kind
            )));
        }
        let mut model = TimingModel::new(self.config.clone(), self.model_seed)?;
        model.params.set_from_flat(&self.weights)?;
        model.set_standardization(self.feat_mean.clone(), self.feat_std.clone())?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub kind: String,
    pub provenance: Provenance,
    pub config: MlpConfig,
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
    pub weights: Vec<f64>,
    pub model_seed: u64,
}

impl MlpCheckpoint {
    pub fn from_model(model: &MlpModel, provenance: Provenance) -> Self {
        MlpCheckpoint {
            kind: MLP_KIND.to_string(),
            provenance,
            config: model.config.clone(),
            in_mean: model.in_mean.clone(),
            in_std: model.in_std.clone(),
            out_mean: model.out_mean.clone(),
            out_std: model.out_std.clone(),
            weights: model.params.flatten(),
            model_seed: model.seed,
        }
    }

    pub fn into_model(&self) -> Result<MlpModel> {
        if self.kind != MLP_KIND {
            return Err(CliError::config(format!(
                "expected a {MLP_KIND} checkpoint, found kind {:?}",
                self.kind
            )));
        }
        let mut model = MlpModel::new(self.config.clone(), self.model_seed)?;
        model.params.set_from_flat(&self.weights)?;
        model.in_mean = self.in_mean.clone();
        model.in_std = self.in_std.clone();
        model.out_mean = self.out_mean.clone();
        model.out_std = self.out_std.clone();
        Ok(model)
    }
}

/// The mixture's own parameters are already flat; stored as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmCheckpoint {
    pub kind: String,
    pub provenance: Provenance,
    pub model: GmmModel,
}

impl GmmCheckpoint {
    pub fn new(model: GmmModel, provenance: Provenance) -> Self {
        GmmCheckpoint { kind: GMM_KIND.to_string(), provenance, model }
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::config(format!("checkpoint serialization: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use corrkit_core::matrix::Matrix;
    use corrkit_core::rng::Rng;

    fn provenance() -> Provenance {
        Provenance {
            schema_version: SCHEMA_VERSION,
            config_hash: "c".into(),
            dataset_sha256: "d".into(),
            split_seed: 1,
            train_seed: 2,
        }
    }

    #[test]
    fn timing_checkpoint_reloads_bit_exact() {
        let cfg = TimingConfig { input_dim: 3, max_len: 16, ..TimingConfig::default() };
        let mut model = TimingModel::new(cfg, 77).unwrap();
        model
            .set_standardization(vec![0.1, -0.2, 0.3], vec![1.0, 2.0, 0.5])
            .unwrap();
        let ckpt = TimingCheckpoint::from_model(
            &model,
            provenance(),
            1.0,
            vec![
                FeatureColumn::PidVelCosine,
                FeatureColumn::GoalDirCosine,
                FeatureColumn::GoalDistance,
            ],
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        save_json(&path, &ckpt).unwrap();
        let back: TimingCheckpoint = load_json(&path).unwrap();
        assert_eq!(ckpt, back);

        let reloaded = back.into_model().unwrap();
        let mut rng = Rng::new(5);
        let x = Matrix::from_fn(7, 3, |_, _| rng.uniform_in(-1.0, 1.0));
        let a = model.forward_cdf(&x).unwrap();
        let b = reloaded.forward_cdf(&x).unwrap();
        assert_eq!(a, b, "forward pass must be bitwise identical after reload");

        // Re-serialization is byte-identical, which criterion-level
        // determinism checks rely on.
        save_json(&dir.path().join("t2.json"), &back).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("t2.json")).unwrap()
        );
    }

    #[test]
    fn provenance_mismatches_are_refused() {
        let p = provenance();
        assert!(p.check_against("c", "d").is_ok());
        assert!(matches!(p.check_against("x", "d"), Err(CliError::Config(_))));
        assert!(matches!(p.check_against("c", "x"), Err(CliError::Config(_))));
    }

    #[test]
    fn kind_field_guards_against_crossed_files() {
        let cfg = TimingConfig { input_dim: 1, max_len: 8, ..TimingConfig::default() };
        let model = TimingModel::new(cfg, 3).unwrap();
        let mut ckpt =
            TimingCheckpoint::from_model(&model, provenance(), 1.0, vec![FeatureColumn::OptimalityRatio]);
        ckpt.kind = "something-else".into();
        assert!(ckpt.into_model().is_err());
    }
}
