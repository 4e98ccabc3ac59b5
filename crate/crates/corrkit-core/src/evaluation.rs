//! Metrics and multi-split evaluation drivers.
//!
//! Timing quality: pooled timestep F1, onset MAE in seconds, and the
//! predicted-to-actual corrected ratio. Spatial quality: KL divergence of
//! the estimated goal posterior from the discretized ground-truth mixture,
//! direction KL(truth || estimate) so missing true-mass regions is what
//! gets penalized.
//!
//! The split drivers retrain from scratch per split seed and are pure
//! functions of (dataset, configs, seeds). WHEN-grid evaluation is taken
//! as a function argument so callers can substitute a parallel per-cell
//! implementation without changing any numbers: cell likelihoods are pure
//! and the reductions here are ordered.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::features::{FeatureColumn, FeatureConfig};
use crate::fmath;
use crate::inference::{
    combine_log_likelihoods, when_log_likelihoods, where_onset_log_likelihoods,
    where_release_log_likelihoods, GoalGrid, PosteriorMap,
};
use crate::matrix::pairwise_sum;
use crate::rng::{derive_seed, Rng};
use crate::simulator::{ground_truth_distribution, split_for_percentile, Dataset, SplitIndices};
use crate::spatial::{fit_gmm, train_placement, GmmOptions, MlpConfig, MlpModel, PlacementPair};
use crate::timing::{
    make_labels, predict_correction_time, train_timing, LabelSequence, SequenceExample,
    TimingConfig, TimingModel, TrainOptions, TrainReport,
};
use crate::trajectory::{Goal, Trajectory};
use crate::{CoreError, Result};

/// Smoothing added to both maps before the KL sum.
pub const KLD_EPSILON: f64 = 1e-12;

/// Pooled timestep confusion counts and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledF1 {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub f1: f64,
    /// Set when neither positives nor positive predictions exist anywhere;
    /// F1 is then defined as 1.
    pub degenerate: bool,
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> PooledF1 {
    if tp == 0 && fp == 0 && fn_ == 0 {
        return PooledF1 {
            true_positives: 0,
            false_positives: 0,
            false_negatives: 0,
            f1: 1.0,
            degenerate: true,
        };
    }
    let denom = (2 * tp + fp + fn_) as f64;
    PooledF1 {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        f1: 2.0 * tp as f64 / denom,
        degenerate: false,
    }
}

fn confusion(cdf: &[f64], labels: &LabelSequence, threshold: f64) -> Result<(usize, usize, usize)> {
    if cdf.len() != labels.len() {
        return Err(CoreError::shape(alloc::format!(
            "{} predictions for {} labels",
            cdf.len(),
            labels.len()
        )));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for t in 0..cdf.len() {
        if !labels.valid[t] {
            continue;
        }
        let pred = cdf[t] > threshold;
        let truth = labels.labels[t] > 0.5;
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok((tp, fp, fn_))
}

/// Timestep-level F1 pooled over all valid steps of all trajectories.
///
/// A step counts as predicted-corrected when its CDF strictly exceeds
/// `threshold`, matching the onset decision rule.
pub fn f1_score(preds: &[Vec<f64>], labels: &[LabelSequence], threshold: f64) -> Result<PooledF1> {
    if preds.len() != labels.len() {
        return Err(CoreError::shape("prediction/label sequence counts differ"));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (cdf, ls) in preds.iter().zip(labels) {
        let (a, b, c) = confusion(cdf, ls, threshold)?;
        tp += a;
        fp += b;
        fn_ += c;
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

/// Mean of per-trajectory F1 scores (degenerate trajectories score 1).
pub fn f1_per_trajectory(
    preds: &[Vec<f64>],
    labels: &[LabelSequence],
    threshold: f64,
) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(CoreError::shape("prediction/label sequence counts differ"));
    }
    if preds.is_empty() {
        return Err(CoreError::invalid("no trajectories to score"));
    }
    let mut acc = 0.0;
    for (cdf, ls) in preds.iter().zip(labels) {
        let (a, b, c) = confusion(cdf, ls, threshold)?;
        acc += f1_from_counts(a, b, c).f1;
    }
    Ok(acc / preds.len() as f64)
}

/// Onset MAE over trajectory pairs that have both a true and a predicted
/// correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeResult {
    /// Mean |predicted - actual| in seconds; absent when no pair qualifies.
    pub mae_seconds: Option<f64>,
    pub pairs: usize,
    /// Trajectories with a true correction but no predicted one.
    pub excluded_missing_prediction: usize,
}

pub fn correction_mae(
    predicted: &[Option<usize>],
    actual: &[Option<usize>],
    dt: f64,
) -> Result<MaeResult> {
    if predicted.len() != actual.len() {
        return Err(CoreError::shape("prediction/actual counts differ"));
    }
    if !(dt > 0.0) {
        return Err(CoreError::invalid("dt must be positive"));
    }
    let mut acc = 0.0;
    let mut pairs = 0;
    let mut excluded = 0;
    for (p, a) in predicted.iter().zip(actual) {
        match (p, a) {
            (Some(tp), Some(ta)) => {
                let d = if tp >= ta { tp - ta } else { ta - tp };
                acc += d as f64 * dt;
                pairs += 1;
            }
            (None, Some(_)) => excluded += 1,
            _ => {}
        }
    }
    Ok(MaeResult {
        mae_seconds: if pairs > 0 { Some(acc / pairs as f64) } else { None },
        pairs,
        excluded_missing_prediction: excluded,
    })
}

/// N_predicted / N_true over corrected trajectories.
pub fn predicted_ratio(n_predicted: usize, n_true: usize) -> Result<f64> {
    if n_true == 0 {
        return Err(CoreError::invalid("no truly corrected trajectories; ratio undefined"));
    }
    Ok(n_predicted as f64 / n_true as f64)
}

/// KL(p_true || p_est) between two maps on the same grid.
///
/// Both maps get `eps` added to every cell and are renormalized before the
/// sum, so floored cells cannot produce infinities. Identical maps give
/// exactly zero. Tiny negative totals from quadrature noise are clamped.
pub fn kld(p_true: &PosteriorMap, p_est: &PosteriorMap, eps: f64) -> Result<f64> {
    if p_true.grid != p_est.grid {
        return Err(CoreError::shape("posterior grids differ"));
    }
    if !(eps >= 0.0) {
        return Err(CoreError::invalid("smoothing eps must be nonnegative"));
    }
    let smooth = |probs: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = probs.iter().map(|&p| p + eps).collect();
        let total = pairwise_sum(&v);
        for x in v.iter_mut() {
            *x /= total;
        }
        v
    };
    let p = smooth(&p_true.probs);
    let q = smooth(&p_est.probs);
    let mut terms = Vec::with_capacity(p.len());
    for (pi, qi) in p.iter().zip(&q) {
        // ln(1) == 0 exactly, so identical maps sum to exactly zero.
        terms.push(pi * fmath::ln(pi / qi));
    }
    let sum = pairwise_sum(&terms);
    if sum < 0.0 {
        if sum < -1e-9 {
            return Err(CoreError::divergence(alloc::format!(
                "KL divergence {sum} below numeric tolerance"
            )));
        }
        return Ok(0.0);
    }
    Ok(sum)
}

/// Builds training examples for the timing model: features of each episode
/// against its intended goal, labels from its correction.
///
/// `columns` selects feature columns (ablations, the single-feature
/// baseline); `None` keeps the full base matrix.
pub fn sequence_examples(
    ds: &Dataset,
    indices: &[usize],
    config: &FeatureConfig,
    columns: Option<&[FeatureColumn]>,
) -> Result<Vec<SequenceExample>> {
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let ep = ds
            .episodes
            .get(i)
            .ok_or_else(|| CoreError::range(alloc::format!("episode index {i} out of range")))?;
        let goal = ds.layout.goal(ep.intended_goal)?.position;
        let base = crate::features::featurize(&ep.trajectory, goal, &ds.layout.goals, config)?;
        let feats = match columns {
            Some(cols) => crate::features::select_columns(&base, cols)?,
            None => base,
        };
        let labels = make_labels(&ep.trajectory, ep.correction.as_ref())?;
        out.push(SequenceExample::new(feats, labels)?);
    }
    Ok(out)
}

/// Everything one timing train+eval split produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEval {
    pub f1: PooledF1,
    pub f1_per_trajectory: f64,
    pub mae: MaeResult,
    pub ratio: f64,
    pub test_size: usize,
    pub test_corrected: usize,
    pub report: TrainReport,
}

/// Seed stream for training inside the split drivers; exported so
/// external trainers can reproduce in-driver models from a split seed.
pub const TRAIN_STREAM: u64 = 0x7472;
/// Seed stream for episode subsampling in the KLD drivers.
pub const EVAL_STREAM: u64 = 0x6576;

/// Trains on one percentile-set split and scores the test part.
pub fn timing_split_eval(
    ds: &Dataset,
    pct: f64,
    columns: Option<&[FeatureColumn]>,
    tconfig: &TimingConfig,
    options: &TrainOptions,
    fc: &FeatureConfig,
    split_seed: u64,
    threshold: f64,
) -> Result<TimingEval> {
    let split = split_for_percentile(ds, pct, split_seed)?;
    let train = sequence_examples(ds, &split.train, fc, columns)?;
    let val = sequence_examples(ds, &split.val, fc, columns)?;
    let test = sequence_examples(ds, &split.test, fc, columns)?;
    let (model, report) = train_timing(&train, &val, tconfig, options, derive_seed(split_seed, TRAIN_STREAM))?;
    score_timing(&model, &test, &split, ds, threshold, report)
}

fn score_timing(
    model: &TimingModel,
    test: &[SequenceExample],
    split: &SplitIndices,
    ds: &Dataset,
    threshold: f64,
    report: TrainReport,
) -> Result<TimingEval> {
    let mut preds = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    let mut pred_onsets = Vec::with_capacity(test.len());
    let mut true_onsets = Vec::with_capacity(test.len());
    for (ex, &idx) in test.iter().zip(&split.test) {
        let cdf = model.forward_cdf(&ex.features)?;
        pred_onsets.push(predict_correction_time(&cdf, threshold));
        true_onsets.push(ds.episodes[idx].correction.as_ref().map(|c| c.onset));
        preds.push(cdf);
        labels.push(ex.labels.clone());
    }
    let f1 = f1_score(&preds, &labels, threshold)?;
    let f1_per_traj = f1_per_trajectory(&preds, &labels, threshold)?;
    let dt = ds.episodes.first().map(|e| e.trajectory.dt).unwrap_or(0.1);
    let mae = correction_mae(&pred_onsets, &true_onsets, dt)?;
    let n_pred = pred_onsets.iter().filter(|p| p.is_some()).count();
    let n_true = true_onsets.iter().filter(|p| p.is_some()).count();
    let ratio = predicted_ratio(n_pred, n_true)?;
    Ok(TimingEval {
        f1,
        f1_per_trajectory: f1_per_traj,
        mae,
        ratio,
        test_size: test.len(),
        test_corrected: n_true,
        report,
    })
}

/// Per-split F1 drop when retraining without some columns.
///
/// Baseline and ablated models share each split seed, so every delta is a
/// paired comparison. Returns baseline-minus-ablated F1 per split.
pub fn ablation_split_delta(
    ds: &Dataset,
    pct: f64,
    baseline_cols: &[FeatureColumn],
    ablated_cols: &[FeatureColumn],
    template: &TimingConfig,
    options: &TrainOptions,
    fc: &FeatureConfig,
    n_splits: usize,
    base_seed: u64,
    threshold: f64,
) -> Result<Vec<f64>> {
    if n_splits == 0 {
        return Err(CoreError::invalid("need at least one split"));
    }
    let mut cfg_base = template.clone();
    cfg_base.input_dim = baseline_cols.len();
    let mut cfg_abl = template.clone();
    cfg_abl.input_dim = ablated_cols.len();
    let mut deltas = Vec::with_capacity(n_splits);
    for i in 0..n_splits {
        let seed = derive_seed(base_seed, i as u64);
        let base = timing_split_eval(ds, pct, Some(baseline_cols), &cfg_base, options, fc, seed, threshold)?;
        let abl = timing_split_eval(ds, pct, Some(ablated_cols), &cfg_abl, options, fc, seed, threshold)?;
        deltas.push(base.f1.f1 - abl.f1.f1);
    }
    Ok(deltas)
}

/// Pluggable WHEN-grid evaluator: same signature as
/// [`when_log_likelihoods`]; implementations must be cell-order pure.
pub type WhenGridFn<'a> = &'a (dyn Fn(
    &TimingModel,
    &Trajectory,
    usize,
    &GoalGrid,
    &[Goal],
    &FeatureConfig,
    f64,
) -> Result<Vec<f64>>
         + Sync);

/// The serial reference WHEN-grid evaluator.
pub fn serial_when_grid(
    model: &TimingModel,
    traj: &Trajectory,
    t_c: usize,
    grid: &GoalGrid,
    layout: &[Goal],
    fc: &FeatureConfig,
    window: f64,
) -> Result<Vec<f64>> {
    when_log_likelihoods(model, traj, t_c, grid, layout, fc, window)
}

/// Mean KLD per model variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KldMeans {
    pub when: f64,
    pub where_onset: f64,
    pub combined_onset: f64,
    pub where_release: f64,
    pub combined_release: f64,
}

impl KldMeans {
    fn zeros() -> Self {
        Self {
            when: 0.0,
            where_onset: 0.0,
            combined_onset: 0.0,
            where_release: 0.0,
            combined_release: 0.0,
        }
    }

    fn add(&mut self, o: &KldMeans) {
        self.when += o.when;
        self.where_onset += o.where_onset;
        self.combined_onset += o.combined_onset;
        self.where_release += o.where_release;
        self.combined_release += o.combined_release;
    }

    fn scale(&mut self, s: f64) {
        self.when *= s;
        self.where_onset *= s;
        self.combined_onset *= s;
        self.where_release *= s;
        self.combined_release *= s;
    }
}

/// Hyperparameters of one KLD evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KldEvalConfig {
    pub pct: f64,
    pub alpha: f64,
    pub n_splits: usize,
    pub base_seed: u64,
    /// Cap on scored test episodes per split; the WHEN grid dominates cost.
    pub max_episodes: usize,
    pub window: f64,
    pub timing: TimingConfig,
    pub timing_options: TrainOptions,
    pub mlp: MlpConfig,
    pub mlp_options: TrainOptions,
    pub gmm: GmmOptions,
}

/// KLD evaluation output: per split seed and aggregated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KldEval {
    pub per_seed: Vec<KldMeans>,
    /// Mean of per-seed means.
    pub mean: KldMeans,
    pub episodes_scored: usize,
}

impl KldEval {
    /// Aggregates per-seed results (in seed order) the same way
    /// [`kld_split_eval`] does.
    pub fn from_per_seed(per_seed: Vec<KldMeans>, episodes_scored: usize) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(CoreError::invalid("need at least one split"));
        }
        let mut mean = KldMeans::zeros();
        for m in &per_seed {
            mean.add(m);
        }
        mean.scale(1.0 / per_seed.len() as f64);
        Ok(KldEval { per_seed, mean, episodes_scored })
    }
}

struct SpatialModels {
    mlp: MlpModel,
    gmm: crate::spatial::GmmModel,
}

fn placement_pairs(ds: &Dataset, indices: &[usize]) -> Vec<PlacementPair> {
    indices
        .iter()
        .filter_map(|&i| {
            let ep = &ds.episodes[i];
            ep.correction.as_ref().map(|c| PlacementPair {
                grasp_point: c.grasp_point,
                grasp_velocity: c.grasp_velocity,
                release_point: c.release_point,
            })
        })
        .collect()
}

fn release_residuals(ds: &Dataset, indices: &[usize]) -> Result<Vec<crate::geom::Vec3>> {
    let mut out = Vec::new();
    for &i in indices {
        let ep = &ds.episodes[i];
        if let Some(c) = &ep.correction {
            let goal = ds.layout.goal(ep.intended_goal)?.position;
            out.push(c.release_point - goal);
        }
    }
    Ok(out)
}

fn train_spatial(ds: &Dataset, split: &SplitIndices, cfg: &KldEvalConfig, seed: u64) -> Result<SpatialModels> {
    let train_pairs = placement_pairs(ds, &split.train);
    let val_pairs = placement_pairs(ds, &split.val);
    let (mlp, _) = train_placement(
        &train_pairs,
        &val_pairs,
        &cfg.mlp,
        &cfg.mlp_options,
        derive_seed(seed, 0x6d),
    )?;
    let residuals = release_residuals(ds, &split.train)?;
    let (gmm, _) = fit_gmm(&residuals, &cfg.gmm, derive_seed(seed, 0x67))?;
    Ok(SpatialModels { mlp, gmm })
}

/// Retrains everything per split seed and scores corrected test episodes
/// against the ground-truth mixture.
pub fn kld_split_eval(
    ds: &Dataset,
    grid: &GoalGrid,
    cfg: &KldEvalConfig,
    fc: &FeatureConfig,
    when_fn: WhenGridFn,
) -> Result<KldEval> {
    if cfg.n_splits == 0 {
        return Err(CoreError::invalid("need at least one split"));
    }
    let mut per_seed = Vec::with_capacity(cfg.n_splits);
    let mut scored_total = 0;
    for i in 0..cfg.n_splits {
        let seed = derive_seed(cfg.base_seed, i as u64);
        let (means, scored) = kld_one_split(ds, grid, cfg, fc, when_fn, seed)?;
        per_seed.push(means);
        scored_total += scored;
    }
    KldEval::from_per_seed(per_seed, scored_total)
}

/// One seed of [`kld_split_eval`]: split, retrain, score. Public so
/// callers with a thread pool can spread seeds themselves; aggregating
/// the returned means in seed order reproduces `kld_split_eval` exactly.
pub fn kld_one_split(
    ds: &Dataset,
    grid: &GoalGrid,
    cfg: &KldEvalConfig,
    fc: &FeatureConfig,
    when_fn: WhenGridFn,
    seed: u64,
) -> Result<(KldMeans, usize)> {
    let split = split_for_percentile(ds, cfg.pct, seed)?;
    let train = sequence_examples(ds, &split.train, fc, None)?;
    let val = sequence_examples(ds, &split.val, fc, None)?;
    let (timing, _) = train_timing(&train, &val, &cfg.timing, &cfg.timing_options, derive_seed(seed, TRAIN_STREAM))?;
    let spatial = train_spatial(ds, &split, cfg, seed)?;
    let density = spatial.gmm.density()?;

    let corrected_test: Vec<usize> = split
        .test
        .iter()
        .cloned()
        .filter(|&i| ds.episodes[i].correction.is_some())
        .collect();
    if corrected_test.is_empty() {
        return Err(CoreError::invalid("no corrected episodes in the test split"));
    }
    let picked: Vec<usize> = if corrected_test.len() > cfg.max_episodes {
        let mut rng = Rng::new(derive_seed(seed, EVAL_STREAM));
        rng.sample_indices(corrected_test.len(), cfg.max_episodes)
            .into_iter()
            .map(|j| corrected_test[j])
            .collect()
    } else {
        corrected_test
    };

    let mut sums = KldMeans::zeros();
    for &idx in &picked {
        let ep = &ds.episodes[idx];
        let c = ep.correction.as_ref().expect("picked only corrected episodes");
        let goal = ds.layout.goal(ep.intended_goal)?;
        let truth = ground_truth_distribution(goal.shape, goal.position, grid)?;

        let when_lls = when_fn(&timing, &ep.trajectory, c.onset, grid, &ds.layout.goals, fc, cfg.window)?;
        let where_on = where_onset_log_likelihoods(&spatial.mlp, &density, c.grasp_point, c.grasp_velocity, grid)?;
        let where_rel = where_release_log_likelihoods(&density, c.release_point, grid)?;
        let comb_on = combine_log_likelihoods(&when_lls, &where_on, cfg.alpha)?;
        let comb_rel = combine_log_likelihoods(&when_lls, &where_rel, cfg.alpha)?;

        let score = |lls: &[f64]| -> Result<f64> {
            let post = PosteriorMap::from_log_likelihoods(grid.clone(), lls)?;
            kld(&truth, &post, KLD_EPSILON)
        };
        sums.when += score(&when_lls)?;
        sums.where_onset += score(&where_on)?;
        sums.combined_onset += score(&comb_on)?;
        sums.where_release += score(&where_rel)?;
        sums.combined_release += score(&comb_rel)?;
    }
    sums.scale(1.0 / picked.len() as f64);
    Ok((sums, picked.len()))
}

/// Mean combined-onset KLD per alpha on one split, reusing the per-episode
/// likelihood grids across the sweep.
pub fn alpha_sweep(
    ds: &Dataset,
    grid: &GoalGrid,
    cfg: &KldEvalConfig,
    fc: &FeatureConfig,
    when_fn: WhenGridFn,
    alphas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if alphas.is_empty() {
        return Err(CoreError::invalid("empty alpha list"));
    }
    let seed = derive_seed(cfg.base_seed, 0);
    let split = split_for_percentile(ds, cfg.pct, seed)?;
    let train = sequence_examples(ds, &split.train, fc, None)?;
    let val = sequence_examples(ds, &split.val, fc, None)?;
    let (timing, _) = train_timing(&train, &val, &cfg.timing, &cfg.timing_options, derive_seed(seed, TRAIN_STREAM))?;
    let spatial = train_spatial(ds, &split, cfg, seed)?;
    let density = spatial.gmm.density()?;

    let corrected_test: Vec<usize> = split
        .test
        .iter()
        .cloned()
        .filter(|&i| ds.episodes[i].correction.is_some())
        .collect();
    if corrected_test.is_empty() {
        return Err(CoreError::invalid("no corrected episodes in the test split"));
    }
    let picked: Vec<usize> = if corrected_test.len() > cfg.max_episodes {
        let mut rng = Rng::new(derive_seed(seed, EVAL_STREAM));
        rng.sample_indices(corrected_test.len(), cfg.max_episodes)
            .into_iter()
            .map(|j| corrected_test[j])
            .collect()
    } else {
        corrected_test
    };

    let mut grids = Vec::with_capacity(picked.len());
    for &idx in &picked {
        let ep = &ds.episodes[idx];
        let c = ep.correction.as_ref().expect("picked only corrected episodes");
        let goal = ds.layout.goal(ep.intended_goal)?;
        let truth = ground_truth_distribution(goal.shape, goal.position, grid)?;
        let when_lls = when_fn(&timing, &ep.trajectory, c.onset, grid, &ds.layout.goals, fc, cfg.window)?;
        let where_on = where_onset_log_likelihoods(&spatial.mlp, &density, c.grasp_point, c.grasp_velocity, grid)?;
        grids.push((truth, when_lls, where_on));
    }

    let mut out = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let mut acc = 0.0;
        for (truth, when_lls, where_on) in &grids {
            let comb = combine_log_likelihoods(when_lls, where_on, a)?;
            let post = PosteriorMap::from_log_likelihoods(grid.clone(), &comb)?;
            acc += kld(truth, &post, KLD_EPSILON)?;
        }
        out.push((a, acc / grids.len() as f64));
    }
    Ok(out)
}

/// Mean and sample standard deviation (n-1; zero for fewer than 2 values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = pairwise_sum(xs) / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (xs.len() - 1) as f64;
    (mean, fmath::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::simulator::{gen_dataset, BoardLayout, Gauss2, GroundTruthMixture, SimProfile};

    fn labels(bits: &[u8]) -> LabelSequence {
        LabelSequence {
            labels: bits.iter().map(|&b| b as f64).collect(),
            valid: alloc::vec![true; bits.len()],
        }
    }

    #[test]
    fn f1_hand_confusion_matrix() {
        // 8 TP, 2 FP, 2 FN pooled over two trajectories -> 0.8 exactly.
        let l1 = labels(&[1, 1, 1, 1, 1, 0, 0, 0]);
        let p1 = alloc::vec![0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.1, 0.1];
        let l2 = labels(&[1, 1, 1, 1, 1, 0, 0, 0]);
        let p2 = alloc::vec![0.9, 0.9, 0.9, 0.1, 0.1, 0.9, 0.1, 0.1];
        let r = f1_score(&[p1, p2], &[l1, l2], 0.5).unwrap();
        assert_eq!(r.true_positives, 8);
        assert_eq!(r.false_positives, 2);
        assert_eq!(r.false_negatives, 2);
        assert!((r.f1 - 0.8).abs() < 1e-15);
        assert!(!r.degenerate);
    }

    #[test]
    fn f1_endpoints() {
        let l = labels(&[0, 0, 1, 1]);
        let perfect = alloc::vec![0.1, 0.2, 0.9, 0.8];
        assert!((f1_score(&[perfect], &[l.clone()], 0.5).unwrap().f1 - 1.0).abs() < 1e-15);
        let all_zero = alloc::vec![0.0; 4];
        assert_eq!(f1_score(&[all_zero], &[l], 0.5).unwrap().f1, 0.0);
    }

    #[test]
    fn f1_degenerate_no_positives_anywhere() {
        let l = labels(&[0, 0, 0]);
        let p = alloc::vec![0.1, 0.2, 0.3];
        let r = f1_score(&[p], &[l], 0.5).unwrap();
        assert_eq!(r.f1, 1.0);
        assert!(r.degenerate);
    }

    #[test]
    fn f1_respects_mask_and_ordering() {
        let mut l = labels(&[1, 1, 0, 0]);
        l.valid[0] = false;
        let p = alloc::vec![0.1, 0.9, 0.1, 0.9];
        let r = f1_score(&[p.clone()], &[l.clone()], 0.5).unwrap();
        // Masked step 0 (an FN if counted) is excluded: TP=1 FP=1 FN=0.
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (1, 1, 0));

        let l2 = labels(&[0, 1, 1, 0]);
        let p2 = alloc::vec![0.9, 0.9, 0.1, 0.1];
        let a = f1_score(&[p.clone(), p2.clone()], &[l.clone(), l2.clone()], 0.5).unwrap();
        let b = f1_score(&[p2, p], &[l2, l], 0.5).unwrap();
        assert_eq!(a.f1, b.f1);
    }

    #[test]
    fn mae_hand_cases() {
        // Offsets +2 and -4 steps at dt 0.1 -> 0.3 s.
        let pred = [Some(12), Some(6)];
        let actual = [Some(10), Some(10)];
        let r = correction_mae(&pred, &actual, 0.1).unwrap();
        assert!((r.mae_seconds.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(r.pairs, 2);
        assert_eq!(r.excluded_missing_prediction, 0);

        let r = correction_mae(&[Some(11)], &[Some(10)], 0.1).unwrap();
        assert!((r.mae_seconds.unwrap() - 0.1).abs() < 1e-12);

        let r = correction_mae(&[Some(10), Some(4)], &[Some(10), Some(4)], 0.1).unwrap();
        assert_eq!(r.mae_seconds.unwrap(), 0.0);
    }

    #[test]
    fn mae_exclusions_and_empty() {
        let pred = [None, Some(5), None];
        let actual = [Some(3), None, None];
        let r = correction_mae(&pred, &actual, 0.1).unwrap();
        assert_eq!(r.mae_seconds, None);
        assert_eq!(r.pairs, 0);
        assert_eq!(r.excluded_missing_prediction, 1);
    }

    #[test]
    fn ratio_cases() {
        assert_eq!(predicted_ratio(10, 10).unwrap(), 1.0);
        assert_eq!(predicted_ratio(8, 10).unwrap(), 0.8);
        assert_eq!(predicted_ratio(12, 10).unwrap(), 1.2);
        assert!(predicted_ratio(5, 0).is_err());
    }

    fn gaussian_map(grid: &GoalGrid, mean: Vec3, sigma: f64) -> PosteriorMap {
        let mix = GroundTruthMixture {
            weights: alloc::vec![1.0],
            comps: alloc::vec![Gauss2 {
                mean: [0.0, 0.0],
                cov: [[sigma * sigma, 0.0], [0.0, sigma * sigma]],
            }],
        };
        let lls: Vec<f64> = (0..grid.len())
            .map(|i| {
                let p = grid.position(i);
                mix.log_density(p.x - mean.x, p.y - mean.y)
            })
            .collect();
        PosteriorMap::from_log_likelihoods(grid.clone(), &lls).unwrap()
    }

    #[test]
    fn kld_identical_maps_is_exactly_zero() {
        let grid = GoalGrid::board_default();
        let m = gaussian_map(&grid, Vec3::new(0.01, -0.02, 0.0), 0.02);
        assert_eq!(kld(&m, &m, KLD_EPSILON).unwrap(), 0.0);
    }

    #[test]
    fn kld_matches_gaussian_closed_form() {
        // Same-variance isotropic Gaussians offset by d: KL = d^2/(2 s^2).
        let grid = GoalGrid::board_default();
        let s = 0.03;
        let a = gaussian_map(&grid, Vec3::new(-0.01, 0.0, 0.0), s);
        let b = gaussian_map(&grid, Vec3::new(0.01, 0.0, 0.0), s);
        let expect = (0.02 * 0.02) / (2.0 * s * s);
        let got = kld(&a, &b, KLD_EPSILON).unwrap();
        assert!(
            (got - expect).abs() / expect < 0.05,
            "grid KL {got} vs closed form {expect}"
        );
    }

    #[test]
    fn kld_nonnegative_on_random_pairs() {
        let grid = GoalGrid::new(-0.02, 0.02, -0.03, 0.03, 0.01).unwrap();
        let mut rng = Rng::new(31337);
        for _ in 0..1000 {
            let la: Vec<f64> = (0..grid.len()).map(|_| rng.uniform_in(-30.0, 0.0)).collect();
            let lb: Vec<f64> = (0..grid.len()).map(|_| rng.uniform_in(-30.0, 0.0)).collect();
            let a = PosteriorMap::from_log_likelihoods(grid.clone(), &la).unwrap();
            let b = PosteriorMap::from_log_likelihoods(grid.clone(), &lb).unwrap();
            assert!(kld(&a, &b, KLD_EPSILON).unwrap() >= 0.0);
        }
    }

    #[test]
    fn kld_rejects_grid_mismatch() {
        let a = gaussian_map(&GoalGrid::board_default(), Vec3::new(0.0, 0.0, 0.0), 0.02);
        let small = GoalGrid::new(-0.02, 0.02, -0.03, 0.03, 0.01).unwrap();
        let b = gaussian_map(&small, Vec3::new(0.0, 0.0, 0.0), 0.02);
        assert!(kld(&a, &b, KLD_EPSILON).is_err());
    }

    #[test]
    fn sequence_examples_align_with_corrections() {
        let layout = BoardLayout::standard();
        let ds = gen_dataset(&layout, &SimProfile::default(), 60, 5).unwrap();
        let idx: Vec<usize> = (0..10).collect();
        let ex = sequence_examples(&ds, &idx, &FeatureConfig::default(), None).unwrap();
        assert_eq!(ex.len(), 10);
        for (e, &i) in ex.iter().zip(&idx) {
            let ep = &ds.episodes[i];
            assert_eq!(e.features.rows(), ep.trajectory.len());
            assert_eq!(e.features.cols(), crate::features::FEATURE_COUNT);
            match &ep.correction {
                Some(c) => {
                    assert_eq!(e.labels.labels[c.onset], 1.0);
                    if c.onset > 0 {
                        assert_eq!(e.labels.labels[c.onset - 1], 0.0);
                    }
                }
                None => assert!(e.labels.labels.iter().all(|&l| l == 0.0)),
            }
        }

        let one_col = sequence_examples(
            &ds,
            &idx,
            &FeatureConfig::default(),
            Some(&[FeatureColumn::OptimalityRatio]),
        )
        .unwrap();
        assert_eq!(one_col[0].features.cols(), 1);
    }

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-12);
        assert!((s - fmath::sqrt(5.0 / 3.0)).abs() < 1e-12);
        let (m1, s1) = mean_std(&[7.0]);
        assert_eq!((m1, s1), (7.0, 0.0));
    }

    #[test]
    fn timing_split_eval_smoke() {
        // Tiny budget: checks plumbing and determinism, not quality.
        let layout = BoardLayout::standard();
        let ds = gen_dataset(&layout, &SimProfile::default(), 60, 17).unwrap();
        let mut tconfig = TimingConfig::default();
        tconfig.max_len = 160;
        let mut options = TrainOptions::default();
        options.max_epochs = 2;
        options.patience = 2;
        options.batch_size = 8;
        let fc = FeatureConfig::default();
        let a = timing_split_eval(&ds, 1.0, None, &tconfig, &options, &fc, 911, 0.5).unwrap();
        assert!(a.f1.f1.is_finite());
        assert!(a.ratio.is_finite());
        assert!(a.test_size > 0);
        let b = timing_split_eval(&ds, 1.0, None, &tconfig, &options, &fc, 911, 0.5).unwrap();
        assert_eq!(a, b);
    }
}
