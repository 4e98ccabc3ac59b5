//! Layer primitives shared by the timing transformer and the placement
//! MLP, plus the optimizer and gradient checker.
//!
//! Forward functions return the caches their backward counterparts need;
//! models own their parameters and call these as free functions.

pub mod adam;
pub mod gradcheck;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::{CoreError, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Options shared by the gradient-descent training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub adam: adam::AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_epochs: 300,
            batch_size: 32,
            patience: 40,
            adam: adam::AdamConfig::default(),
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(CoreError::invalid("batch_size and max_epochs must be positive"));
        }
        Ok(())
    }
}

/// Loss curves and the checkpoint the final model was restored from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn new() -> Self {
        TrainReport {
            train_losses: Vec::new(),
            val_losses: Vec::new(),
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
        }
    }
}

impl Default for TrainReport {
    fn default() -> Self {
        Self::new()
    }
}

/// Weight init: U(-s, s) with s = 1/sqrt(fan_in), biases zero.
pub fn init_scaled_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let s = 1.0 / fmath::sqrt(fan_in as f64);
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform_in(-s, s))
}

/// Row-wise softmax with an optional column mask shared by all rows.
///
/// Masked columns get probability zero; the rest renormalize. A fully
/// masked mask is rejected because every row would lose its support.
pub fn softmax_rows(x: &Matrix, mask: Option<&[bool]>) -> Result<Matrix> {
    if let Some(m) = mask {
        if m.len() != x.cols() {
            return Err(CoreError::shape(format!(
                "softmax mask length {} for {} columns",
                m.len(),
                x.cols()
            )));
        }
        if !m.iter().any(|&keep| keep) {
            return Err(CoreError::invalid("softmax mask excludes every column"));
        }
    }
    let keep = |c: usize| mask.map_or(true, |m| m[c]);
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut max = f64::NEG_INFINITY;
        for (c, &v) in row.iter().enumerate() {
            if keep(c) && v > max {
                max = v;
            }
        }
        let out_row = out.row_mut(r);
        let mut total = 0.0;
        for (c, &v) in row.iter().enumerate() {
            if keep(c) {
                let e = fmath::exp(v - max);
                out_row[c] = e;
                total += e;
            }
        }
        for v in out_row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Given softmax outputs `probs` and upstream gradient `dprobs`, returns
/// the gradient w.r.t. the logits: p ∘ (dp - <dp, p>) per row.
pub fn softmax_backward_rows(probs: &Matrix, dprobs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = dprobs.row(r);
        let mut dot = 0.0;
        for (&pi, &di) in p.iter().zip(dp) {
            dot += pi * di;
        }
        for ((o, &pi), &di) in out.row_mut(r).iter_mut().zip(p).zip(dp) {
            *o = pi * (di - dot);
        }
    }
    out
}

/// Per-row layer normalization cache for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
}

/// y = gain ∘ (x - mean) / sqrt(var + eps) + bias, per row.
pub fn layer_norm_forward(
    x: &Matrix,
    gain: &[f64],
    bias: &[f64],
) -> Result<(Matrix, LayerNormCache)> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(CoreError::shape(format!(
            "layer_norm gain/bias length {}/{} for {} columns",
            gain.len(),
            bias.len(),
            d
        )));
    }
    let mut y = Matrix::zeros(x.rows(), d);
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    let n = d as f64;
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let istd = 1.0 / fmath::sqrt(var + LAYER_NORM_EPS);
        inv_std.push(istd);
        let xh = xhat.row_mut(r);
        let yr = y.row_mut(r);
        for c in 0..d {
            let h = (row[c] - mean) * istd;
            xh[c] = h;
            yr[c] = gain[c] * h + bias[c];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Returns (dx, dgain, dbias).
pub fn layer_norm_backward(
    dy: &Matrix,
    cache: &LayerNormCache,
    gain: &[f64],
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let rows = dy.rows();
    let d = dy.cols();
    let n = d as f64;
    let mut dx = Matrix::zeros(rows, d);
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let istd = cache.inv_std[r];
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for c in 0..d {
            let dxh = dyr[c] * gain[c];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[c];
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
        }
        mean_dxh /= n;
        mean_dxh_xh /= n;
        let dxr = dx.row_mut(r);
        for c in 0..d {
            let dxh = dyr[c] * gain[c];
            dxr[c] = istd * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
        }
    }
    (dx, dgain, dbias)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// dL/dx for y = relu(x), given dy and the pre-activation x.
pub fn relu_backward(dy: &Matrix, x_pre: &Matrix) -> Matrix {
    let mut out = dy.clone();
    for (o, &x) in out.as_mut_slice().iter_mut().zip(x_pre.as_slice()) {
        if x <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else
/// 1/(1-rate). Multiplying by the mask is both forward and backward.
pub fn dropout_mask(rng: &mut Rng, rows: usize, cols: usize, rate: f64) -> Matrix {
    debug_assert!((0.0..1.0).contains(&rate));
    let keep_scale = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.uniform() < rate {
            0.0
        } else {
            keep_scale
        }
    })
}

pub fn elementwise_mul(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let mut out = a.clone();
    for (o, &m) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o *= m;
    }
    out
}

/// Column sums, used for bias gradients.
pub fn column_sums(x: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (o, &v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 5.0]]).unwrap();
        let p = softmax_rows(&x, None).unwrap();
        for r in 0..2 {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Uniform logits give uniform probabilities.
        let u = Matrix::from_rows(&[vec![0.7, 0.7, 0.7, 0.7]]).unwrap();
        let p = softmax_rows(&u, None).unwrap();
        for &v in p.row(0) {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_mask_zeroes_and_renormalizes() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let p = softmax_rows(&x, Some(&[true, false, true])).unwrap();
        assert_eq!(p.get(0, 1), 0.0);
        let s: f64 = p.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        // Renormalized pair keeps the two-logit softmax ratio.
        let expected = fmath::exp(3.0) / (fmath::exp(1.0) + fmath::exp(3.0));
        assert!((p.get(0, 2) - expected).abs() < 1e-12);
        assert!(softmax_rows(&x, Some(&[false, false, false])).is_err());
    }

    #[test]
    fn softmax_survives_extreme_logits() {
        let x = Matrix::from_rows(&[vec![1000.0, 999.0], vec![-1000.0, -1000.0]]).unwrap();
        let p = softmax_rows(&x, None).unwrap();
        assert!(p.is_finite());
        assert!((p.row(1)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = Rng::new(4);
        let x = Matrix::from_fn(5, 32, |_, _| rng.normal_scaled(3.0, 2.0));
        let gain = vec![1.0; 32];
        let bias = vec![0.0; 32];
        let (y, _) = layer_norm_forward(&x, &gain, &bias).unwrap();
        for r in 0..5 {
            let row = y.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 32.0;
            let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3); // eps shifts var slightly below 1
        }
    }

    #[test]
    fn dropout_mask_is_inverted_scaled() {
        let mut rng = Rng::new(8);
        let m = dropout_mask(&mut rng, 100, 40, 0.1);
        let scale = 1.0 / 0.9;
        let mut zeros = 0usize;
        for &v in m.as_slice() {
            assert!(v == 0.0 || (v - scale).abs() < 1e-15);
            if v == 0.0 {
                zeros += 1;
            }
        }
        let rate = zeros as f64 / 4000.0;
        assert!((rate - 0.1).abs() < 0.02, "dropout rate {rate}");
    }

    #[test]
    fn relu_backward_gates_on_preactivation() {
        let x = Matrix::from_rows(&[vec![-1.0, 0.0, 2.0]]).unwrap();
        let dy = Matrix::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap();
        let dx = relu_backward(&dy, &x);
        assert_eq!(dx.as_slice(), &[0.0, 0.0, 5.0]);
    }
}
