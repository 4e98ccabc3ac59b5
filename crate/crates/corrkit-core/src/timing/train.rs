//! Training loop for the timing model: pooled masked BCE, Adam with
//! clipping and decay, early stopping on validation loss.

use alloc::vec::Vec;

use crate::fmath;
use crate::matrix::{pairwise_sum, Matrix};
use crate::nn::adam::AdamState;
use crate::nn::{TrainOptions, TrainReport};
use crate::rng::{derive_seed, Rng};
use crate::timing::model::{positional_encoding, TimingConfig, TimingModel, TimingParams};
use crate::timing::LabelSequence;
use crate::{CoreError, Result};

/// One training sequence: raw (unstandardized) features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceExample {
    pub features: Matrix,
    pub labels: LabelSequence,
}

impl SequenceExample {
    pub fn new(features: Matrix, labels: LabelSequence) -> Result<Self> {
        if features.rows() != labels.len() || labels.valid.len() != labels.len() {
            return Err(CoreError::shape(
                "features, labels and mask must share one length",
            ));
        }
        if features.rows() == 0 {
            return Err(CoreError::invalid("empty training sequence"));
        }
        if !features.is_finite() {
            return Err(CoreError::invalid("non-finite feature value"));
        }
        Ok(SequenceExample { features, labels })
    }
}

const PROB_FLOOR: f64 = 1e-12;

fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    -(y * fmath::ln(p) + (1.0 - y) * fmath::ln(1.0 - p))
}

/// Pooled masked BCE over a set of sequences, optionally accumulating
/// parameter gradients.
///
/// The loss is the mean BCE over every valid timestep of every sequence
/// (one pool, not a mean of per-sequence means). With `dropout_rng`
/// set, dropout masks are drawn in sequence order, so a caller that
/// re-seeds per call gets a deterministic (and checkable) loss.
pub fn loss_and_gradients(
    model: &TimingModel,
    examples: &[&SequenceExample],
    mut dropout_rng: Option<&mut Rng>,
    mut grads: Option<&mut TimingParams>,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(CoreError::invalid("loss over zero sequences"));
    }
    let total_valid: usize = examples.iter().map(|e| e.labels.valid_count()).sum();
    if total_valid == 0 {
        return Err(CoreError::invalid("no valid timesteps in batch"));
    }
    let max_t = examples.iter().map(|e| e.features.rows()).max().unwrap_or(0);
    let pos = positional_encoding(max_t.min(model.config.max_len), model.config.d_model);

    let inv_n = 1.0 / total_valid as f64;
    let mut terms: Vec<f64> = Vec::with_capacity(total_valid);
    for example in examples {
        let x = model.standardize(&example.features)?;
        let cache = model.forward_cached(&x, &pos, dropout_rng.as_deref_mut())?;
        let mut dlogits = Vec::with_capacity(cache.probs.len());
        for t in 0..cache.probs.len() {
            if example.labels.valid[t] {
                let y = example.labels.labels[t];
                let p = cache.probs[t];
                terms.push(bce_term(p, y));
                dlogits.push((p - y) * inv_n);
            } else {
                dlogits.push(0.0);
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            model.backward(&cache, &dlogits, g)?;
        }
    }
    let loss = pairwise_sum(&terms) * inv_n;
    if !loss.is_finite() {
        return Err(CoreError::divergence("non-finite training loss"));
    }
    Ok(loss)
}

/// Inference-mode loss over a slice of examples.
pub fn evaluate_loss(model: &TimingModel, examples: &[SequenceExample]) -> Result<f64> {
    let refs: Vec<&SequenceExample> = examples.iter().collect();
    loss_and_gradients(model, &refs, None, None)
}

fn standardization_stats(examples: &[SequenceExample], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = alloc::vec![0.0; dim];
    let mut count = 0usize;
    for e in examples {
        for t in 0..e.features.rows() {
            if e.labels.valid[t] {
                for (m, &v) in mean.iter_mut().zip(e.features.row(t)) {
                    *m += v;
                }
                count += 1;
            }
        }
    }
    let n = count.max(1) as f64;
    for m in &mut mean {
        *m /= n;
    }
    let mut var = alloc::vec![0.0; dim];
    for e in examples {
        for t in 0..e.features.rows() {
            if e.labels.valid[t] {
                for (s, (&v, &m)) in var.iter_mut().zip(e.features.row(t).iter().zip(&mean)) {
                    let d = v - m;
                    *s += d * d;
                }
            }
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = fmath::sqrt(s / n);
            // Constant columns standardize to zero rather than blowing
            // up; matters for the constant control feature.
            if sd < 1e-8 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    (mean, std)
}

/// Trains a timing model from scratch.
///
/// Deterministic in (inputs, config, options, seed): weight init, batch
/// shuffling and dropout all derive from `seed`. Early stopping keeps
/// the parameters of the best validation epoch.
pub fn train_timing(
    train: &[SequenceExample],
    val: &[SequenceExample],
    config: &TimingConfig,
    options: &TrainOptions,
    seed: u64,
) -> Result<(TimingModel, TrainReport)> {
    config.validate()?;
    options.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::invalid("training needs non-empty train and val sets"));
    }
    for e in train.iter().chain(val) {
        if e.features.cols() != config.input_dim {
            return Err(CoreError::shape(alloc::format!(
                "sequence with {} feature columns, model expects {}",
                e.features.cols(),
                config.input_dim
            )));
        }
        if e.features.rows() > config.max_len {
            return Err(CoreError::range("sequence longer than config.max_len"));
        }
    }

    let mut model = TimingModel::new(config.clone(), seed)?;
    let (mean, std) = standardization_stats(train, config.input_dim);
    model.set_standardization(mean, std)?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = Rng::new(derive_seed(seed, 1));
    let mut dropout_rng = Rng::new(derive_seed(seed, 2));
    let mut adam = AdamState::new(model.params.count(), options.adam.clone());

    let mut report = TrainReport::new();
    let mut best_params = model.params.flatten();
    let mut stale_epochs = 0usize;

    for epoch in 0..options.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_terms: Vec<f64> = Vec::new();
        for chunk in order.chunks(options.batch_size) {
            let batch: Vec<&SequenceExample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut grads = TimingParams::zeros(config);
            let loss =
                loss_and_gradients(&model, &batch, Some(&mut dropout_rng), Some(&mut grads))?;
            epoch_terms.push(loss * chunk.len() as f64);
            let mut flat = model.params.flatten();
            adam.update(&mut flat, &grads.flatten())?;
            model.params.set_from_flat(&flat)?;
        }
        report
            .train_losses
            .push(pairwise_sum(&epoch_terms) / train.len() as f64);

        let val_loss = evaluate_loss(&model, val)?;
        report.val_losses.push(val_loss);
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best_params = model.params.flatten();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= options.patience {
                break;
            }
        }
    }

    model.params.set_from_flat(&best_params)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use crate::timing::make_labels;
    use crate::timing::LabelSequence;

    fn synthetic_example(rng: &mut Rng, t_len: usize, dim: usize) -> SequenceExample {
        // Labels switch where feature 0 crosses zero from below; gives
        // the model a learnable rule.
        let onset = t_len / 2 + rng.below(t_len / 4);
        let features = Matrix::from_fn(t_len, dim, |r, c| {
            if c == 0 {
                if r >= onset {
                    1.0 + 0.1 * rng.normal()
                } else {
                    -1.0 + 0.1 * rng.normal()
                }
            } else {
                rng.normal()
            }
        });
        let labels: Vec<f64> = (0..t_len).map(|t| if t >= onset { 1.0 } else { 0.0 }).collect();
        let valid = alloc::vec![true; t_len];
        SequenceExample::new(features, LabelSequence { labels, valid }).unwrap()
    }

    fn small_config(dim: usize) -> TimingConfig {
        TimingConfig {
            input_dim: dim,
            d_model: 16,
            n_heads: 4,
            n_layers: 2,
            d_ff: 32,
            dropout: 0.0,
            max_len: 64,
        }
    }

    #[test]
    fn loss_matches_hand_bce_on_constant_labels() {
        let config = small_config(3);
        let model = TimingModel::new(config, 1).unwrap();
        let features = Matrix::zeros(4, 3);
        let labels = LabelSequence {
            labels: alloc::vec![0.0, 0.0, 1.0, 1.0],
            valid: alloc::vec![true; 4],
        };
        let ex = SequenceExample::new(features, labels).unwrap();
        let loss = loss_and_gradients(&model, &[&ex], None, None).unwrap();
        let cdf = model.forward_cdf(&ex.features).unwrap();
        let hand: f64 = cdf
            .iter()
            .zip(&ex.labels.labels)
            .map(|(&p, &y)| bce_term(p, y))
            .sum::<f64>()
            / 4.0;
        assert!((loss - hand).abs() < 1e-12);
    }

    #[test]
    fn loss_pools_across_sequences_not_per_sequence() {
        let config = small_config(2);
        let model = TimingModel::new(config, 2).unwrap();
        let mk = |t_len: usize, y: f64| {
            SequenceExample::new(
                Matrix::zeros(t_len, 2),
                LabelSequence {
                    labels: alloc::vec![y; t_len],
                    valid: alloc::vec![true; t_len],
                },
            )
            .unwrap()
        };
        let short = mk(2, 1.0);
        let long = mk(8, 0.0);
        let pooled = loss_and_gradients(&model, &[&short, &long], None, None).unwrap();
        let l_short = loss_and_gradients(&model, &[&short], None, None).unwrap();
        let l_long = loss_and_gradients(&model, &[&long], None, None).unwrap();
        let expected = (l_short * 2.0 + l_long * 8.0) / 10.0;
        assert!((pooled - expected).abs() < 1e-12);
        let per_seq_mean = (l_short + l_long) / 2.0;
        assert!((pooled - per_seq_mean).abs() > 1e-6);
    }

    #[test]
    fn masked_steps_do_not_contribute() {
        let config = small_config(2);
        let model = TimingModel::new(config, 3).unwrap();
        let mut rng = Rng::new(4);
        let features = Matrix::from_fn(6, 2, |_, _| rng.normal());
        let full = SequenceExample::new(
            features.clone(),
            LabelSequence {
                labels: alloc::vec![1.0; 6],
                valid: alloc::vec![true; 6],
            },
        )
        .unwrap();
        // Flip two labels but mask them out; loss must match a pool of
        // the remaining four steps.
        let mut masked_labels = alloc::vec![1.0; 6];
        masked_labels[1] = 0.0;
        masked_labels[4] = 0.0;
        let masked = SequenceExample::new(
            features,
            LabelSequence {
                labels: masked_labels,
                valid: alloc::vec![true, false, true, true, false, true],
            },
        )
        .unwrap();
        let cdf = model.forward_cdf(&full.features).unwrap();
        let hand: f64 = [0usize, 2, 3, 5]
            .iter()
            .map(|&t| bce_term(cdf[t], 1.0))
            .sum::<f64>()
            / 4.0;
        let got = loss_and_gradients(&model, &[&masked], None, None).unwrap();
        assert!((got - hand).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradients_pass_central_difference() {
        let config = small_config(3);
        let model = TimingModel::new(config.clone(), 7).unwrap();
        let mut rng = Rng::new(8);
        let examples: Vec<SequenceExample> =
            (0..2).map(|_| synthetic_example(&mut rng, 8, 3)).collect();
        let refs: Vec<&SequenceExample> = examples.iter().collect();

        let mut grads = TimingParams::zeros(&config);
        loss_and_gradients(&model, &refs, None, Some(&mut grads)).unwrap();
        let flat_grads = grads.flatten();
        let flat_params = model.params.flatten();

        let mut scratch = model.clone();
        let report = grad_check(
            |p| {
                scratch.params.set_from_flat(p)?;
                loss_and_gradients(&scratch, &refs, None, None)
            },
            &flat_params,
            &flat_grads,
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-3,
            "max rel error {} at {}",
            report.max_rel_error,
            report.worst_index
        );
    }

    #[test]
    fn gradients_with_frozen_dropout_pass_central_difference() {
        let mut config = small_config(2);
        config.dropout = 0.2;
        let model = TimingModel::new(config.clone(), 11).unwrap();
        let mut rng = Rng::new(12);
        let examples: Vec<SequenceExample> =
            (0..2).map(|_| synthetic_example(&mut rng, 6, 2)).collect();
        let refs: Vec<&SequenceExample> = examples.iter().collect();

        // Re-seeding per evaluation freezes the dropout masks, making
        // the dropped-out loss a deterministic function of the params.
        let mut grads = TimingParams::zeros(&config);
        let mut rng_g = Rng::new(99);
        loss_and_gradients(&model, &refs, Some(&mut rng_g), Some(&mut grads)).unwrap();
        let flat_grads = grads.flatten();
        let flat_params = model.params.flatten();

        let mut scratch = model.clone();
        let report = grad_check(
            |p| {
                scratch.params.set_from_flat(p)?;
                let mut rng_e = Rng::new(99);
                loss_and_gradients(&scratch, &refs, Some(&mut rng_e), None)
            },
            &flat_params,
            &flat_grads,
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
    fn training_learns_a_separable_rule() {
        let mut rng = Rng::new(21);
        let train: Vec<SequenceExample> =
            (0..24).map(|_| synthetic_example(&mut rng, 20, 2)).collect();
        let val: Vec<SequenceExample> =
            (0..6).map(|_| synthetic_example(&mut rng, 20, 2)).collect();
        let config = TimingConfig {
            input_dim: 2,
            d_model: 16,
            n_heads: 4,
            n_layers: 1,
            d_ff: 32,
            dropout: 0.0,
            max_len: 64,
        };
        let options = TrainOptions {
            max_epochs: 60,
            batch_size: 8,
            patience: 60,
            ..TrainOptions::default()
        };
        let (model, report) = train_timing(&train, &val, &config, &options, 5).unwrap();
        assert!(report.best_val_loss < 0.25, "val loss {}", report.best_val_loss);
        assert!(report.train_losses[0] > report.best_val_loss);
        // The learned CDF must actually separate the regimes.
        let probe = synthetic_example(&mut rng, 20, 2);
        let cdf = model.forward_cdf(&probe.features).unwrap();
        let onset = probe.labels.labels.iter().position(|&l| l == 1.0).unwrap();
        assert!(cdf[onset + 2] > 0.7, "cdf after onset {}", cdf[onset + 2]);
        assert!(cdf[onset.saturating_sub(3)] < 0.4);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut rng = Rng::new(31);
        let train: Vec<SequenceExample> =
            (0..8).map(|_| synthetic_example(&mut rng, 10, 2)).collect();
        let val: Vec<SequenceExample> =
            (0..2).map(|_| synthetic_example(&mut rng, 10, 2)).collect();
        let config = TimingConfig {
            input_dim: 2,
            d_model: 16,
            n_heads: 4,
            n_layers: 1,
            d_ff: 32,
            dropout: 0.1,
            max_len: 64,
        };
        let options = TrainOptions {
            max_epochs: 5,
            batch_size: 4,
            patience: 5,
            ..TrainOptions::default()
        };
        let (a, ra) = train_timing(&train, &val, &config, &options, 9).unwrap();
        let (b, rb) = train_timing(&train, &val, &config, &options, 9).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ra, rb);
        let (c, _) = train_timing(&train, &val, &config, &options, 10).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn labels_integrate_with_examples() {
        use crate::geom::Vec3;
        use crate::trajectory::{LegibilityLevel, Trajectory};
        let positions = (0..6).map(|i| Vec3::new(i as f64 * 0.02, 0.0, 0.0)).collect();
        let traj = Trajectory::new(1, 0.1, positions, 0, LegibilityLevel::High, false).unwrap();
        let labels = make_labels(&traj, None).unwrap();
        let features = Matrix::zeros(6, 7);
        let ex = SequenceExample::new(features, labels).unwrap();
        assert_eq!(ex.labels.len(), 6);
    }
}
