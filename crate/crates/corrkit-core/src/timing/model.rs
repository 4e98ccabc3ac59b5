//! Transformer encoder with a per-timestep sigmoid CDF head.
//!
//! Forward and reverse passes are hand-written over [`Matrix`] with
//! explicit caches; parameters flatten to a single vector in a fixed
//! order so the optimizer and the gradient checker see one flat space.
//! Layers are post-norm: x + Dropout(MHA(x)) -> LayerNorm, then
//! a + Dropout(FFN(a)) -> LayerNorm.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::matrix::Matrix;
use crate::nn::{
    column_sums, dropout_mask, elementwise_mul, init_scaled_uniform, layer_norm_backward,
    layer_norm_forward, relu, relu_backward, softmax_backward_rows, softmax_rows, LayerNormCache,
};
use crate::rng::{derive_seed, Rng};
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Feature columns per timestep.
    pub input_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Longest sequence the positional table covers.
    pub max_len: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            input_dim: 7,
            d_model: 32,
            n_heads: 8,
            n_layers: 2,
            d_ff: 64,
            dropout: 0.1,
            max_len: 256,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.n_layers == 0
            || self.d_ff == 0
            || self.max_len == 0
        {
            return Err(CoreError::invalid("timing config dimensions must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(CoreError::invalid(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Parameters of one encoder layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
}

/// All trainable tensors; doubles as the gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingParams {
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub w_head: Vec<f64>,
    pub b_head: f64,
}

impl TimingParams {
    pub fn init(config: &TimingConfig, rng: &mut Rng) -> Self {
        let d = config.d_model;
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerParams {
                wq: init_scaled_uniform(rng, d, d),
                bq: vec![0.0; d],
                wk: init_scaled_uniform(rng, d, d),
                bk: vec![0.0; d],
                wv: init_scaled_uniform(rng, d, d),
                bv: vec![0.0; d],
                wo: init_scaled_uniform(rng, d, d),
                bo: vec![0.0; d],
                ln1_gain: vec![1.0; d],
                ln1_bias: vec![0.0; d],
                w1: init_scaled_uniform(rng, d, config.d_ff),
                b1: vec![0.0; config.d_ff],
                w2: init_scaled_uniform(rng, config.d_ff, d),
                b2: vec![0.0; d],
                ln2_gain: vec![1.0; d],
                ln2_bias: vec![0.0; d],
            });
        }
        let w_head = init_scaled_uniform(rng, d, 1).as_slice().to_vec();
        TimingParams {
            w_in: init_scaled_uniform(rng, config.input_dim, d),
            b_in: vec![0.0; d],
            layers,
            w_head,
            b_head: 0.0,
        }
    }

    pub fn zeros(config: &TimingConfig) -> Self {
        let d = config.d_model;
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: Matrix::zeros(d, d),
                bq: vec![0.0; d],
                wk: Matrix::zeros(d, d),
                bk: vec![0.0; d],
                wv: Matrix::zeros(d, d),
                bv: vec![0.0; d],
                wo: Matrix::zeros(d, d),
                bo: vec![0.0; d],
                ln1_gain: vec![0.0; d],
                ln1_bias: vec![0.0; d],
                w1: Matrix::zeros(d, config.d_ff),
                b1: vec![0.0; config.d_ff],
                w2: Matrix::zeros(config.d_ff, d),
                b2: vec![0.0; d],
                ln2_gain: vec![0.0; d],
                ln2_bias: vec![0.0; d],
            })
            .collect();
        TimingParams {
            w_in: Matrix::zeros(config.input_dim, d),
            b_in: vec![0.0; d],
            layers,
            w_head: vec![0.0; d],
            b_head: 0.0,
        }
    }

    // Single source of truth for the flattening order; all flat-vector
    // plumbing goes through these two.
    fn visit(&self, mut f: impl FnMut(&[f64])) {
        f(self.w_in.as_slice());
        f(&self.b_in);
        for l in &self.layers {
            f(l.wq.as_slice());
            f(&l.bq);
            f(l.wk.as_slice());
            f(&l.bk);
            f(l.wv.as_slice());
            f(&l.bv);
            f(l.wo.as_slice());
            f(&l.bo);
            f(&l.ln1_gain);
            f(&l.ln1_bias);
            f(l.w1.as_slice());
            f(&l.b1);
            f(l.w2.as_slice());
            f(&l.b2);
            f(&l.ln2_gain);
            f(&l.ln2_bias);
        }
        f(&self.w_head);
        f(core::slice::from_ref(&self.b_head));
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        f(self.w_in.as_mut_slice());
        f(&mut self.b_in);
        for l in &mut self.layers {
            f(l.wq.as_mut_slice());
            f(&mut l.bq);
            f(l.wk.as_mut_slice());
            f(&mut l.bk);
            f(l.wv.as_mut_slice());
            f(&mut l.bv);
            f(l.wo.as_mut_slice());
            f(&mut l.bo);
            f(&mut l.ln1_gain);
            f(&mut l.ln1_bias);
            f(l.w1.as_mut_slice());
            f(&mut l.b1);
            f(l.w2.as_mut_slice());
            f(&mut l.b2);
            f(&mut l.ln2_gain);
            f(&mut l.ln2_bias);
        }
        f(&mut self.w_head);
        f(core::slice::from_mut(&mut self.b_head));
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

/// Sinusoidal position table: row t holds interleaved
/// sin(t ω_k), cos(t ω_k) with ω_k = 10000^(-2k/d).
pub fn positional_encoding(len: usize, d_model: usize) -> Matrix {
    let mut pe = Matrix::zeros(len, d_model);
    for t in 0..len {
        let row = pe.row_mut(t);
        for k in 0..d_model / 2 {
            let omega = fmath::powf(10000.0, -(2.0 * k as f64) / d_model as f64);
            let angle = t as f64 * omega;
            row[2 * k] = fmath::sin(angle);
            row[2 * k + 1] = fmath::cos(angle);
        }
    }
    pe
}

/// Trained timing model: parameters plus the feature standardization
/// captured from its training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub config: TimingConfig,
    pub params: TimingParams,
    pub feat_mean: Vec<f64>,
    pub feat_std: Vec<f64>,
    pub seed: u64,
}

struct AttentionCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Per-head post-softmax attention, T×T each.
    probs: Vec<Matrix>,
    concat: Matrix,
}

struct LayerCache {
    x_in: Matrix,
    attn: AttentionCache,
    drop1: Option<Matrix>,
    ln1: LayerNormCache,
    a1: Matrix,
    ff_pre: Matrix,
    drop2: Option<Matrix>,
    ln2: LayerNormCache,
}

/// Activations needed by [`TimingModel::backward`].
pub struct ForwardCache {
    x_std: Matrix,
    layers: Vec<LayerCache>,
    h_final: Matrix,
    /// Sigmoid outputs, one per timestep.
    pub probs: Vec<f64>,
}

fn head_slice(m: &Matrix, head: usize, dh: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), dh);
    for r in 0..m.rows() {
        out.row_mut(r)
            .copy_from_slice(&m.row(r)[head * dh..(head + 1) * dh]);
    }
    out
}

fn head_write_add(target: &mut Matrix, head: usize, dh: usize, src: &Matrix) {
    for r in 0..src.rows() {
        let dst = &mut target.row_mut(r)[head * dh..(head + 1) * dh];
        for (d, &s) in dst.iter_mut().zip(src.row(r)) {
            *d += s;
        }
    }
}

impl TimingModel {
    /// Fresh model with scaled-uniform weights and identity
    /// standardization.
    pub fn new(config: TimingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(derive_seed(seed, 0x7133));
        let params = TimingParams::init(&config, &mut rng);
        Ok(TimingModel {
            feat_mean: vec![0.0; config.input_dim],
            feat_std: vec![1.0; config.input_dim],
            params,
            config,
            seed,
        })
    }

    pub fn set_standardization(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        if mean.len() != self.config.input_dim || std.len() != self.config.input_dim {
            return Err(CoreError::shape("standardization length != input_dim"));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(CoreError::invalid("standardization std must be positive"));
        }
        self.feat_mean = mean;
        self.feat_std = std;
        Ok(())
    }

    /// (x - mean) / std per column.
    pub fn standardize(&self, raw: &Matrix) -> Result<Matrix> {
        if raw.cols() != self.config.input_dim {
            return Err(CoreError::shape(format!(
                "{} feature columns for input_dim {}",
                raw.cols(),
                self.config.input_dim
            )));
        }
        let mut out = raw.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for c in 0..row.len() {
                row[c] = (row[c] - self.feat_mean[c]) / self.feat_std[c];
            }
        }
        Ok(out)
    }

    /// Full forward pass on raw features; inference mode (no dropout).
    pub fn forward_cdf(&self, raw: &Matrix) -> Result<Vec<f64>> {
        let pos = positional_encoding(raw.rows(), self.config.d_model);
        self.forward_cdf_with_pos(raw, &pos)
    }

    /// Forward with a caller-provided positional table (first
    /// `raw.rows()` rows are used). Lets grid loops amortize the table.
    pub fn forward_cdf_with_pos(&self, raw: &Matrix, pos: &Matrix) -> Result<Vec<f64>> {
        let x = self.standardize(raw)?;
        let cache = self.forward_cached(&x, pos, None)?;
        Ok(cache.probs)
    }

    /// Forward on standardized input, returning the backward cache.
    /// `dropout_rng` enables training-mode dropout; masks are drawn in
    /// deterministic forward order.
    pub fn forward_cached(
        &self,
        x_std: &Matrix,
        pos: &Matrix,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<ForwardCache> {
        let cfg = &self.config;
        let t_len = x_std.rows();
        if t_len == 0 {
            return Err(CoreError::invalid("empty sequence"));
        }
        if t_len > cfg.max_len {
            return Err(CoreError::range(format!(
                "sequence length {t_len} exceeds max_len {}",
                cfg.max_len
            )));
        }
        if pos.rows() < t_len || pos.cols() != cfg.d_model {
            return Err(CoreError::shape("positional table too small"));
        }
        let p = &self.params;

        // Input projection plus positional encoding.
        let mut x = x_std.matmul(&p.w_in)?;
        x.add_row_bias(&p.b_in)?;
        for r in 0..t_len {
            let row = x.row_mut(r);
            for (v, &pe) in row.iter_mut().zip(pos.row(r)) {
                *v += pe;
            }
        }

        let dh = cfg.head_dim();
        let scale = 1.0 / fmath::sqrt(dh as f64);
        let mut layer_caches = Vec::with_capacity(cfg.n_layers);

        for layer in &p.layers {
            let x_in = x.clone();

            // Multi-head self-attention.
            let mut q = x_in.matmul(&layer.wq)?;
            q.add_row_bias(&layer.bq)?;
            let mut k = x_in.matmul(&layer.wk)?;
            k.add_row_bias(&layer.bk)?;
            let mut v = x_in.matmul(&layer.wv)?;
            v.add_row_bias(&layer.bv)?;

            let mut probs = Vec::with_capacity(cfg.n_heads);
            let mut concat = Matrix::zeros(t_len, cfg.d_model);
            for h in 0..cfg.n_heads {
                let qh = head_slice(&q, h, dh);
                let kh = head_slice(&k, h, dh);
                let vh = head_slice(&v, h, dh);
                let mut scores = qh.matmul_transpose_b(&kh)?;
                scores.scale(scale);
                let ah = softmax_rows(&scores, None)?;
                let oh = ah.matmul(&vh)?;
                for r in 0..t_len {
                    concat.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(oh.row(r));
                }
                probs.push(ah);
            }
            let mut mha = concat.matmul(&layer.wo)?;
            mha.add_row_bias(&layer.bo)?;

            let drop1 = match dropout_rng.as_deref_mut() {
                Some(rng) if cfg.dropout > 0.0 => {
                    Some(dropout_mask(rng, t_len, cfg.d_model, cfg.dropout))
                }
                _ => None,
            };
            let dropped1 = match &drop1 {
                Some(mask) => elementwise_mul(&mha, mask),
                None => mha,
            };

            let mut r1 = x_in.clone();
            r1.add_scaled(&dropped1, 1.0)?;
            let (a1, ln1) = layer_norm_forward(&r1, &layer.ln1_gain, &layer.ln1_bias)?;

            // Position-wise feed-forward.
            let mut ff_pre = a1.matmul(&layer.w1)?;
            ff_pre.add_row_bias(&layer.b1)?;
            let g = relu(&ff_pre);
            let mut ff_out = g.matmul(&layer.w2)?;
            ff_out.add_row_bias(&layer.b2)?;

            let drop2 = match dropout_rng.as_deref_mut() {
                Some(rng) if cfg.dropout > 0.0 => {
                    Some(dropout_mask(rng, t_len, cfg.d_model, cfg.dropout))
                }
                _ => None,
            };
            let dropped2 = match &drop2 {
                Some(mask) => elementwise_mul(&ff_out, mask),
                None => ff_out,
            };

            let mut r2 = a1.clone();
            r2.add_scaled(&dropped2, 1.0)?;
            let (out, ln2) = layer_norm_forward(&r2, &layer.ln2_gain, &layer.ln2_bias)?;

            layer_caches.push(LayerCache {
                x_in,
                attn: AttentionCache {
                    q,
                    k,
                    v,
                    probs,
                    concat,
                },
                drop1,
                ln1,
                a1,
                ff_pre,
                drop2,
                ln2,
            });
            x = out;
        }

        // Per-timestep sigmoid head.
        let mut probs = Vec::with_capacity(t_len);
        for r in 0..t_len {
            let mut logit = self.params.b_head;
            for (&hv, &w) in x.row(r).iter().zip(&self.params.w_head) {
                logit += hv * w;
            }
            probs.push(fmath::sigmoid(logit));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(CoreError::divergence("non-finite activation in timing forward"));
        }

        Ok(ForwardCache {
            x_std: x_std.clone(),
            layers: layer_caches,
            h_final: x,
            probs,
        })
    }

    /// Accumulates gradients into `grads` given dL/dlogit per timestep.
    ///
    /// For the pooled BCE loss the caller passes
    /// (prob - label) * weight_t, which folds the sigmoid derivative in.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &[f64],
        grads: &mut TimingParams,
    ) -> Result<()> {
        let cfg = &self.config;
        let t_len = cache.h_final.rows();
        if dlogits.len() != t_len {
            return Err(CoreError::shape("dlogits length != sequence length"));
        }
        let p = &self.params;
        let dh = cfg.head_dim();
        let scale = 1.0 / fmath::sqrt(dh as f64);

        // Head.
        let mut dx = Matrix::zeros(t_len, cfg.d_model);
        for r in 0..t_len {
            let dl = dlogits[r];
            grads.b_head += dl;
            let h_row = cache.h_final.row(r);
            let dx_row = dx.row_mut(r);
            for c in 0..cfg.d_model {
                grads.w_head[c] += dl * h_row[c];
                dx_row[c] = dl * p.w_head[c];
            }
        }

        // Layers in reverse.
        for (layer, (lp, lc)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
            let lg = &mut grads.layers[layer];

            // LN2.
            let (dr2, dg2, db2) = layer_norm_backward(&dx, &lc.ln2, &lp.ln2_gain);
            add_vec(&mut lg.ln2_gain, &dg2);
            add_vec(&mut lg.ln2_bias, &db2);

            // Residual: r2 = a1 + dropout(ff_out).
            let mut da1 = dr2.clone();
            let dff_out = match &lc.drop2 {
                Some(mask) => elementwise_mul(&dr2, mask),
                None => dr2,
            };

            // FF second linear.
            let g = relu(&lc.ff_pre);
            lg.w2.add_scaled(&g.matmul_transpose_a(&dff_out)?, 1.0)?;
            add_vec(&mut lg.b2, &column_sums(&dff_out));
            let dg = dff_out.matmul_transpose_b(&lp.w2)?;
            let dff_pre = relu_backward(&dg, &lc.ff_pre);

            // FF first linear.
            lg.w1.add_scaled(&lc.a1.matmul_transpose_a(&dff_pre)?, 1.0)?;
            add_vec(&mut lg.b1, &column_sums(&dff_pre));
            da1.add_scaled(&dff_pre.matmul_transpose_b(&lp.w1)?, 1.0)?;

            // LN1.
            let (dr1, dg1, db1) = layer_norm_backward(&da1, &lc.ln1, &lp.ln1_gain);
            add_vec(&mut lg.ln1_gain, &dg1);
            add_vec(&mut lg.ln1_bias, &db1);

            // Residual: r1 = x_in + dropout(mha).
            let mut dx_in = dr1.clone();
            let dmha = match &lc.drop1 {
                Some(mask) => elementwise_mul(&dr1, mask),
                None => dr1,
            };

            // Output projection.
            lg.wo
                .add_scaled(&lc.attn.concat.matmul_transpose_a(&dmha)?, 1.0)?;
            add_vec(&mut lg.bo, &column_sums(&dmha));
            let dconcat = dmha.matmul_transpose_b(&lp.wo)?;

            // Attention heads.
            let mut dq = Matrix::zeros(t_len, cfg.d_model);
            let mut dk = Matrix::zeros(t_len, cfg.d_model);
            let mut dv = Matrix::zeros(t_len, cfg.d_model);
            for h in 0..cfg.n_heads {
                let doh = head_slice(&dconcat, h, dh);
                let ah = &lc.attn.probs[h];
                let vh = head_slice(&lc.attn.v, h, dh);
                let qh = head_slice(&lc.attn.q, h, dh);
                let kh = head_slice(&lc.attn.k, h, dh);

                let dah = doh.matmul_transpose_b(&vh)?;
                let dvh = ah.matmul_transpose_a(&doh)?;
                let mut dscores = softmax_backward_rows(ah, &dah);
                dscores.scale(scale);
                let dqh = dscores.matmul(&kh)?;
                let dkh = dscores.matmul_transpose_a(&qh)?;

                head_write_add(&mut dq, h, dh, &dqh);
                head_write_add(&mut dk, h, dh, &dkh);
                head_write_add(&mut dv, h, dh, &dvh);
            }

            // Projections back to the layer input.
            lg.wq.add_scaled(&lc.x_in.matmul_transpose_a(&dq)?, 1.0)?;
            add_vec(&mut lg.bq, &column_sums(&dq));
            lg.wk.add_scaled(&lc.x_in.matmul_transpose_a(&dk)?, 1.0)?;
            add_vec(&mut lg.bk, &column_sums(&dk));
            lg.wv.add_scaled(&lc.x_in.matmul_transpose_a(&dv)?, 1.0)?;
            add_vec(&mut lg.bv, &column_sums(&dv));

            dx_in.add_scaled(&dq.matmul_transpose_b(&lp.wq)?, 1.0)?;
            dx_in.add_scaled(&dk.matmul_transpose_b(&lp.wk)?, 1.0)?;
            dx_in.add_scaled(&dv.matmul_transpose_b(&lp.wv)?, 1.0)?;
            dx = dx_in;
        }

        // Input projection (positional table has no parameters).
        grads
            .w_in
            .add_scaled(&cache.x_std.matmul_transpose_a(&dx)?, 1.0)?;
        add_vec(&mut grads.b_in, &column_sums(&dx));
        Ok(())
    }
}

fn add_vec(target: &mut [f64], src: &[f64]) {
    for (t, &s) in target.iter_mut().zip(src) {
        *t += s;
    }
}
