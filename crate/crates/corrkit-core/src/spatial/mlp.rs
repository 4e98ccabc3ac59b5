//! Placement regressor: (grasp point, grasp velocity) -> release point.
//!
//! A 6-64-64-3 ReLU MLP trained with MSE on z-scored inputs and
//! outputs. Shares the Adam optimizer and early-stopping discipline of
//! the timing model.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::geom::Vec3;
use crate::matrix::{pairwise_sum, Matrix};
use crate::nn::adam::AdamState;
use crate::nn::{
    column_sums, init_scaled_uniform, relu, relu_backward, TrainOptions, TrainReport,
};
use crate::rng::{derive_seed, Rng};
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 6,
            hidden_dim: 64,
            output_dim: 3,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(CoreError::invalid("mlp dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
}

impl MlpParams {
    fn init(config: &MlpConfig, rng: &mut Rng) -> Self {
        MlpParams {
            w1: init_scaled_uniform(rng, config.input_dim, config.hidden_dim),
            b1: vec![0.0; config.hidden_dim],
            w2: init_scaled_uniform(rng, config.hidden_dim, config.hidden_dim),
            b2: vec![0.0; config.hidden_dim],
            w3: init_scaled_uniform(rng, config.hidden_dim, config.output_dim),
            b3: vec![0.0; config.output_dim],
        }
    }

    pub fn zeros(config: &MlpConfig) -> Self {
        MlpParams {
            w1: Matrix::zeros(config.input_dim, config.hidden_dim),
            b1: vec![0.0; config.hidden_dim],
            w2: Matrix::zeros(config.hidden_dim, config.hidden_dim),
            b2: vec![0.0; config.hidden_dim],
            w3: Matrix::zeros(config.hidden_dim, config.output_dim),
            b3: vec![0.0; config.output_dim],
        }
    }

    fn visit(&self, mut f: impl FnMut(&[f64])) {
        f(self.w1.as_slice());
        f(&self.b1);
        f(self.w2.as_slice());
        f(&self.b2);
        f(self.w3.as_slice());
        f(&self.b3);
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        f(self.w1.as_mut_slice());
        f(&mut self.b1);
        f(self.w2.as_mut_slice());
        f(&mut self.b2);
        f(self.w3.as_mut_slice());
        f(&mut self.b3);
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.visit(|s| n += s.len());
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        self.visit(|s| out.extend_from_slice(s));
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(CoreError::shape(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.count()
            )));
        }
        let mut cursor = 0;
        self.visit_mut(|s| {
            s.copy_from_slice(&flat[cursor..cursor + s.len()]);
            cursor += s.len();
        });
        Ok(())
    }
}

/// One supervised placement example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementPair {
    pub grasp_point: Vec3,
    pub grasp_velocity: Vec3,
    pub release_point: Vec3,
}

impl PlacementPair {
    fn input(&self) -> [f64; 6] {
        let p = self.grasp_point.to_array();
        let v = self.grasp_velocity.to_array();
        [p[0], p[1], p[2], v[0], v[1], v[2]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub params: MlpParams,
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
    pub seed: u64,
}

pub struct MlpCache {
    x: Matrix,
    h1_pre: Matrix,
    h1: Matrix,
    h2_pre: Matrix,
    h2: Matrix,
    pub out: Matrix,
}

impl MlpModel {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(derive_seed(seed, 0x6d6c70));
        let params = MlpParams::init(&config, &mut rng);
        Ok(MlpModel {
            in_mean: vec![0.0; config.input_dim],
            in_std: vec![1.0; config.input_dim],
            out_mean: vec![0.0; config.output_dim],
            out_std: vec![1.0; config.output_dim],
            params,
            config,
            seed,
        })
    }

    /// Forward on standardized input rows.
    pub fn forward_cached(&self, x: &Matrix) -> Result<MlpCache> {
        if x.cols() != self.config.input_dim {
            return Err(CoreError::shape(format!(
                "{} input columns, model expects {}",
                x.cols(),
                self.config.input_dim
            )));
        }
        let p = &self.params;
        let mut h1_pre = x.matmul(&p.w1)?;
        h1_pre.add_row_bias(&p.b1)?;
        let h1 = relu(&h1_pre);
        let mut h2_pre = h1.matmul(&p.w2)?;
        h2_pre.add_row_bias(&p.b2)?;
        let h2 = relu(&h2_pre);
        let mut out = h2.matmul(&p.w3)?;
        out.add_row_bias(&p.b3)?;
        if !out.is_finite() {
            return Err(CoreError::divergence("non-finite activation in mlp forward"));
        }
        Ok(MlpCache {
            x: x.clone(),
            h1_pre,
            h1,
            h2_pre,
            h2,
            out,
        })
    }

    /// Accumulates gradients for dL/dout into `grads`.
    pub fn backward(&self, cache: &MlpCache, dout: &Matrix, grads: &mut MlpParams) -> Result<()> {
        let p = &self.params;
        grads.w3.add_scaled(&cache.h2.matmul_transpose_a(dout)?, 1.0)?;
        add_vec(&mut grads.b3, &column_sums(dout));
        let dh2 = dout.matmul_transpose_b(&p.w3)?;
        let dh2_pre = relu_backward(&dh2, &cache.h2_pre);

        grads
            .w2
            .add_scaled(&cache.h1.matmul_transpose_a(&dh2_pre)?, 1.0)?;
        add_vec(&mut grads.b2, &column_sums(&dh2_pre));
        let dh1 = dh2_pre.matmul_transpose_b(&p.w2)?;
        let dh1_pre = relu_backward(&dh1, &cache.h1_pre);

        grads
            .w1
            .add_scaled(&cache.x.matmul_transpose_a(&dh1_pre)?, 1.0)?;
        add_vec(&mut grads.b1, &column_sums(&dh1_pre));
        Ok(())
    }

    fn standardize_input(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.in_mean.iter().zip(&self.in_std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    /// Predicted release point for one correction onset.
    pub fn predict(&self, grasp_point: Vec3, grasp_velocity: Vec3) -> Result<Vec3> {
        let pair = PlacementPair {
            grasp_point,
            grasp_velocity,
            release_point: Vec3::new(0.0, 0.0, 0.0),
        };
        let std_in = self.standardize_input(&pair.input());
        let x = Matrix::from_vec(1, self.config.input_dim, std_in)?;
        let cache = self.forward_cached(&x)?;
        let out = cache.out.row(0);
        Ok(Vec3::new(
            out[0] * self.out_std[0] + self.out_mean[0],
            out[1] * self.out_std[1] + self.out_mean[1],
            out[2] * self.out_std[2] + self.out_mean[2],
        ))
    }
}

fn add_vec(target: &mut [f64], src: &[f64]) {
    for (t, &s) in target.iter_mut().zip(src) {
        *t += s;
    }
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for row in rows {
        for (s, (&v, &m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
            let d = v - m;
            *s += d * d;
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = fmath::sqrt(s / n);
            if sd < 1e-8 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    (mean, std)
}

fn standardize_rows(rows: &[Vec<f64>], mean: &[f64], std: &[f64]) -> Matrix {
    Matrix::from_fn(rows.len(), mean.len(), |r, c| (rows[r][c] - mean[c]) / std[c])
}

/// MSE over all output entries of `pred` against `target` (both
/// standardized), optionally with the gradient.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if (pred.rows(), pred.cols()) != (target.rows(), target.cols()) {
        return Err(CoreError::shape("mse shapes differ"));
    }
    let n = (pred.rows() * pred.cols()) as f64;
    let mut terms = Vec::with_capacity(pred.rows() * pred.cols());
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for r in 0..pred.rows() {
        let pr = pred.row(r);
        let tr = target.row(r);
        let gr = grad.row_mut(r);
        for c in 0..pr.len() {
            let d = pr[c] - tr[c];
            terms.push(d * d);
            gr[c] = 2.0 * d / n;
        }
    }
    Ok((pairwise_sum(&terms) / n, grad))
}

/// Trains the placement MLP; deterministic in (inputs, options, seed).
pub fn train_placement(
    train: &[PlacementPair],
    val: &[PlacementPair],
    config: &MlpConfig,
    options: &TrainOptions,
    seed: u64,
) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    options.validate()?;
    if train.len() < 10 {
        return Err(CoreError::invalid(format!(
            "placement training needs at least 10 pairs, got {}",
            train.len()
        )));
    }
    if val.is_empty() {
        return Err(CoreError::invalid("placement training needs a validation set"));
    }
    for p in train.iter().chain(val) {
        if !(p.grasp_point.is_finite() && p.grasp_velocity.is_finite() && p.release_point.is_finite())
        {
            return Err(CoreError::invalid("non-finite placement pair"));
        }
    }

    let in_rows: Vec<Vec<f64>> = train.iter().map(|p| p.input().to_vec()).collect();
    let out_rows: Vec<Vec<f64>> = train.iter().map(|p| p.release_point.to_array().to_vec()).collect();
    let (in_mean, in_std) = column_stats(&in_rows);
    let (out_mean, out_std) = column_stats(&out_rows);

    let mut model = MlpModel::new(config.clone(), seed)?;
    model.in_mean = in_mean;
    model.in_std = in_std;
    model.out_mean = out_mean;
    model.out_std = out_std;

    let x_train = standardize_rows(&in_rows, &model.in_mean, &model.in_std);
    let y_train = standardize_rows(&out_rows, &model.out_mean, &model.out_std);
    let val_in: Vec<Vec<f64>> = val.iter().map(|p| p.input().to_vec()).collect();
    let val_out: Vec<Vec<f64>> = val.iter().map(|p| p.release_point.to_array().to_vec()).collect();
    let x_val = standardize_rows(&val_in, &model.in_mean, &model.in_std);
    let y_val = standardize_rows(&val_out, &model.out_mean, &model.out_std);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = Rng::new(derive_seed(seed, 1));
    let mut adam = AdamState::new(model.params.count(), options.adam.clone());
    let mut report = TrainReport::new();
    let mut best = model.params.flatten();
    let mut stale = 0usize;

    for epoch in 0..options.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_terms: Vec<f64> = Vec::new();
        for chunk in order.chunks(options.batch_size) {
            let xb = Matrix::from_fn(chunk.len(), model.config.input_dim, |r, c| {
                x_train.get(chunk[r], c)
            });
            let yb = Matrix::from_fn(chunk.len(), model.config.output_dim, |r, c| {
                y_train.get(chunk[r], c)
            });
            let cache = model.forward_cached(&xb)?;
            let (loss, dout) = mse_loss(&cache.out, &yb)?;
            if !loss.is_finite() {
                return Err(CoreError::divergence("non-finite placement loss"));
            }
            epoch_terms.push(loss * chunk.len() as f64);
            let mut grads = MlpParams::zeros(&model.config);
            model.backward(&cache, &dout, &mut grads)?;
            let mut flat = model.params.flatten();
            adam.update(&mut flat, &grads.flatten())?;
            model.params.set_from_flat(&flat)?;
        }
        report
            .train_losses
            .push(pairwise_sum(&epoch_terms) / train.len() as f64);

        let cache = model.forward_cached(&x_val)?;
        let (val_loss, _) = mse_loss(&cache.out, &y_val)?;
        report.val_losses.push(val_loss);
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = model.params.flatten();
            stale = 0;
        } else {
            stale += 1;
            if stale >= options.patience {
                break;
            }
        }
    }
    model.params.set_from_flat(&best)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;

    fn linear_pair(rng: &mut Rng) -> PlacementPair {
        // Release = grasp + 0.2 * velocity + fixed offset + small noise.
        let grasp = Vec3::new(
            rng.normal_scaled(0.0, 0.08),
            rng.normal_scaled(-0.1, 0.1),
            rng.normal_scaled(0.1, 0.03),
        );
        let vel = Vec3::new(rng.normal(), rng.normal(), rng.normal_scaled(0.0, 0.3)) * 0.3;
        let noise = Vec3::new(rng.normal(), rng.normal(), rng.normal()) * 0.002;
        PlacementPair {
            grasp_point: grasp,
            grasp_velocity: vel,
            release_point: grasp + vel * 0.2 + Vec3::new(0.05, 0.02, -0.08) + noise,
        }
    }

    #[test]
    fn flatten_roundtrip_and_count() {
        let config = MlpConfig::default();
        let model = MlpModel::new(config.clone(), 3).unwrap();
        let flat = model.params.flatten();
        assert_eq!(flat.len(), 6 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3);
        let mut other = MlpParams::zeros(&config);
        other.set_from_flat(&flat).unwrap();
        assert_eq!(other, model.params);
    }

    #[test]
    fn mse_gradients_pass_central_difference() {
        let config = MlpConfig {
            input_dim: 6,
            hidden_dim: 16,
            output_dim: 3,
        };
        let model = MlpModel::new(config.clone(), 5).unwrap();
        let mut rng = Rng::new(6);
        let x = Matrix::from_fn(4, 6, |_, _| rng.normal());
        let y = Matrix::from_fn(4, 3, |_, _| rng.normal());

        let cache = model.forward_cached(&x).unwrap();
        let (_, dout) = mse_loss(&cache.out, &y).unwrap();
        let mut grads = MlpParams::zeros(&config);
        model.backward(&cache, &dout, &mut grads).unwrap();

        let mut scratch = model.clone();
        let report = grad_check(
            |p| {
                scratch.params.set_from_flat(p)?;
                let cache = scratch.forward_cached(&x)?;
                Ok(mse_loss(&cache.out, &y)?.0)
            },
            &model.params.flatten(),
            &grads.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-3,
            "max rel error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn learns_a_noisy_linear_map() {
        let mut rng = Rng::new(9);
        let train: Vec<PlacementPair> = (0..200).map(|_| linear_pair(&mut rng)).collect();
        let val: Vec<PlacementPair> = (0..40).map(|_| linear_pair(&mut rng)).collect();
        let options = TrainOptions {
            max_epochs: 200,
            batch_size: 32,
            patience: 30,
            ..TrainOptions::default()
        };
        let (model, report) = train_placement(&train, &val, &MlpConfig::default(), &options, 4).unwrap();
        assert!(report.best_val_loss < 0.05, "val loss {}", report.best_val_loss);
        let probe = linear_pair(&mut rng);
        let pred = model.predict(probe.grasp_point, probe.grasp_velocity).unwrap();
        let err = pred.dist(probe.release_point);
        assert!(err < 0.02, "prediction error {err}");
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut rng = Rng::new(11);
        let train: Vec<PlacementPair> = (0..40).map(|_| linear_pair(&mut rng)).collect();
        let val: Vec<PlacementPair> = (0..10).map(|_| linear_pair(&mut rng)).collect();
        let options = TrainOptions {
            max_epochs: 10,
            batch_size: 8,
            patience: 10,
            ..TrainOptions::default()
        };
        let (a, _) = train_placement(&train, &val, &MlpConfig::default(), &options, 7).unwrap();
        let (b, _) = train_placement(&train, &val, &MlpConfig::default(), &options, 7).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn rejects_tiny_training_sets() {
        let mut rng = Rng::new(13);
        let few: Vec<PlacementPair> = (0..9).map(|_| linear_pair(&mut rng)).collect();
        let val: Vec<PlacementPair> = (0..4).map(|_| linear_pair(&mut rng)).collect();
        let err = train_placement(
            &few,
            &val,
            &MlpConfig::default(),
            &TrainOptions::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::InvalidArgument(_)));
    }
}
