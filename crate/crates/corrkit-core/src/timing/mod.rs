//! Correction-timing prediction: labels, CDF post-processing, and the
//! transformer model/training loop (in [`model`] and [`train`]).
//!
//! The model emits a per-timestep value interpreted as the CDF of the
//! correction onset: cdf[t] ≈ P(onset ≤ t). Downstream consumers need a
//! per-timestep probability mass ([`pdf_from_cdf`]), a smoothed
//! likelihood that an onset lands near a given step
//! ([`timing_likelihood`]), and a hard onset estimate
//! ([`predict_correction_time`]).

pub mod model;
pub mod train;

pub use model::{positional_encoding, TimingConfig, TimingModel, TimingParams};
pub use train::{evaluate_loss, loss_and_gradients, train_timing, SequenceExample};

pub use crate::nn::{TrainOptions, TrainReport};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::trajectory::{CorrectionEvent, Trajectory};
use crate::{CoreError, Result};

/// Default smoothing window for [`timing_likelihood`], seconds.
pub const DEFAULT_LIKELIHOOD_WINDOW: f64 = 1.2;

/// Threshold on the CDF for hard onset decisions.
pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

/// Per-timestep binary supervision with a validity mask.
///
/// labels[t] = 1 iff a correction onset happened at or before t. The
/// mask exists for padded or partially observed sequences; generated
/// data is fully valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub labels: Vec<f64>,
    pub valid: Vec<bool>,
}

impl LabelSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Builds the 0/1 step-function labels for one trajectory.
///
/// Uncorrected trajectories are all zero; a correction at onset `t_c`
/// yields zeros before `t_c` and ones from `t_c` on. A trajectory of
/// length 5 with onset index 2 labels as [0, 0, 1, 1, 1].
pub fn make_labels(traj: &Trajectory, correction: Option<&CorrectionEvent>) -> Result<LabelSequence> {
    let n = traj.len();
    let mut labels = vec![0.0; n];
    if let Some(event) = correction {
        if event.onset >= n {
            return Err(CoreError::range(format!(
                "correction onset {} in trajectory of length {n}",
                event.onset
            )));
        }
        for l in &mut labels[event.onset..] {
            *l = 1.0;
        }
    }
    Ok(LabelSequence {
        labels,
        valid: vec![true; n],
    })
}

/// First difference of a CDF, clamped at zero.
///
/// pdf[0] = cdf[0] and pdf[t] = max(0, cdf[t] - cdf[t-1]): the model's
/// CDF head is not constrained to be monotone, so decreasing stretches
/// contribute zero mass instead of negative mass.
pub fn pdf_from_cdf(cdf: &[f64]) -> Vec<f64> {
    let mut pdf = Vec::with_capacity(cdf.len());
    let mut prev = 0.0;
    for &c in cdf {
        let d = c - prev;
        pdf.push(if d > 0.0 { d } else { 0.0 });
        prev = c;
    }
    pdf
}

/// Mean PDF mass in a symmetric window around step `t`.
///
/// The window spans `window_s` seconds (half on each side, rounded to
/// steps) and is truncated at the sequence bounds; the mean divides by
/// the number of in-range steps only. With the 1.2 s default and
/// dt = 0.1 s an interior window covers 13 steps.
pub fn timing_likelihood(pdf: &[f64], t: usize, dt: f64, window_s: f64) -> Result<f64> {
    if t >= pdf.len() {
        return Err(CoreError::range(format!(
            "window center {t} in sequence of length {}",
            pdf.len()
        )));
    }
    if !(dt > 0.0 && window_s >= 0.0) {
        return Err(CoreError::invalid("window needs dt > 0 and window_s >= 0"));
    }
    let half = crate::fmath::round(window_s / (2.0 * dt)) as usize;
    let lo = t.saturating_sub(half);
    let hi = (t + half).min(pdf.len() - 1);
    let mut acc = 0.0;
    for &p in &pdf[lo..=hi] {
        acc += p;
    }
    Ok(acc / (hi - lo + 1) as f64)
}

/// Hard onset estimate from a predicted CDF.
///
/// Thresholds the CDF at `threshold` (strictly above) and returns the
/// start of the final run of ones, i.e. the latest switch into the
/// corrected regime that persists to the end. Returns None when the
/// last step is below threshold (no sustained correction).
pub fn predict_correction_time(cdf: &[f64], threshold: f64) -> Option<usize> {
    let mut last_zero = None;
    for (t, &c) in cdf.iter().enumerate() {
        if !(c > threshold) {
            last_zero = Some(t);
        }
    }
    match last_zero {
        None => {
            if cdf.is_empty() {
                None
            } else {
                Some(0)
            }
        }
        Some(z) if z + 1 < cdf.len() => Some(z + 1),
        Some(_) => None,
    }
}
