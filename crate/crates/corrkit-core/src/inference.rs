//! Posterior inference over candidate goal locations.
//!
//! Candidates live on a planar grid at z = 0. Three log-likelihood sources
//! feed the same [`PosteriorMap`] machinery:
//!
//! * WHEN: timing-model evidence. For each cell, re-featurize the observed
//!   prefix under the hypothesis that the cell is the goal, run the timing
//!   model, and score the observed correction onset against the predicted
//!   CDF via a windowed likelihood.
//! * WHERE (onset): placement-regressor evidence. Predict the release point
//!   from the grasp snapshot, then score each cell under the residual
//!   mixture centered on that prediction.
//! * WHERE (release): score each cell under the residual mixture centered
//!   on the observed release point.
//!
//! Log-likelihoods are combined per cell as `alpha * when + (1 - alpha) *
//! where` and normalized by max-subtraction. Cells whose shifted likelihood
//! underflows are floored at [`LIKELIHOOD_FLOOR`] so the posterior never
//! contains exact zeros unless every cell is impossible, in which case the
//! map degrades to uniform and says so.

use alloc::vec::Vec;

use crate::features::{self, FeatureConfig};
use crate::fmath;
use crate::geom::{Vec3, ZERO3};
use crate::matrix::pairwise_sum;
use crate::spatial::GmmDensity;
use crate::timing::{pdf_from_cdf, timing_likelihood, TimingModel};
use crate::trajectory::{Goal, Trajectory};
use crate::{CoreError, Result};

#[cfg(feature = "std")]
use serde::{Deserialize, Serialize};

/// Floor applied to shifted (max-normalized) likelihoods before posterior
/// normalization. Keeps log(posterior) finite for downstream KL divergences.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// Default weight on the WHEN term when combining evidence.
pub const DEFAULT_ALPHA: f64 = 0.8;

/// Uniform planar grid of candidate goal positions at z = 0.
///
/// Cells are ordered row-major with x fastest: `index = iy * nx + ix`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "std", derive(Serialize, Deserialize))]
pub struct GoalGrid {
    pub x_min: f64,
    pub y_min: f64,
    pub step: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GoalGrid {
    /// Grid spanning [x_min, x_max] x [y_min, y_max] inclusive of both ends.
    ///
    /// The extents must be (near-)integer multiples of `step`; counts are
    /// rounded to absorb float noise in the division.
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(CoreError::invalid("grid step must be positive and finite"));
        }
        if !(x_max > x_min) || !(y_max > y_min) {
            return Err(CoreError::invalid("grid extents must be non-degenerate"));
        }
        let nx = (fmath::round((x_max - x_min) / step) as usize) + 1;
        let ny = (fmath::round((y_max - y_min) / step) as usize) + 1;
        Ok(Self { x_min, y_min, step, nx, ny })
    }

    /// Grid covering the workspace board region: x in [-0.2, 0.2],
    /// y in [-0.3, 0.3], 1 cm spacing (41 x 61 = 2501 cells).
    pub fn board_default() -> Self {
        // Unwrap is fine: constants satisfy `new`'s checks.
        Self::new(-0.2, 0.2, -0.3, 0.3, 0.01).expect("board grid constants are valid")
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Center of cell `index`, at z = 0.
    pub fn position(&self, index: usize) -> Vec3 {
        debug_assert!(index < self.len());
        let ix = index % self.nx;
        let iy = index / self.nx;
        Vec3::new(
            self.x_min + ix as f64 * self.step,
            self.y_min + iy as f64 * self.step,
            0.0,
        )
    }

    /// Index of the cell whose center is nearest to `p` (x/y only), or None
    /// if `p` falls outside the grid by more than half a step.
    pub fn nearest_index(&self, p: Vec3) -> Option<usize> {
        let fx = (p.x - self.x_min) / self.step;
        let fy = (p.y - self.y_min) / self.step;
        let ix = fmath::round(fx);
        let iy = fmath::round(fy);
        if ix < 0.0 || iy < 0.0 || ix >= self.nx as f64 || iy >= self.ny as f64 {
            return None;
        }
        Some(iy as usize * self.nx + ix as usize)
    }
}

/// Normalized probability mass over the cells of a [`GoalGrid`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "std", derive(Serialize, Deserialize))]
pub struct PosteriorMap {
    pub grid: GoalGrid,
    pub probs: Vec<f64>,
    /// True when every cell scored -inf and the map fell back to uniform.
    pub degenerate: bool,
}

impl PosteriorMap {
    /// Normalize per-cell log-likelihoods into a posterior.
    ///
    /// Subtracts the max log-likelihood, exponentiates, floors at
    /// [`LIKELIHOOD_FLOOR`], and divides by the pairwise sum. If every entry
    /// is -inf the result is uniform with `degenerate` set.
    pub fn from_log_likelihoods(grid: GoalGrid, log_liks: &[f64]) -> Result<Self> {
        let n = grid.len();
        if log_liks.len() != n {
            return Err(CoreError::shape(alloc::format!(
                "grid has {} cells but {} log-likelihoods given",
                n,
                log_liks.len()
            )));
        }
        if log_liks.iter().any(|v| v.is_nan()) {
            return Err(CoreError::invalid("log-likelihood contains NaN"));
        }
        let max = log_liks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            let p = 1.0 / n as f64;
            return Ok(Self { grid, probs: alloc::vec![p; n], degenerate: true });
        }
        let mut probs: Vec<f64> = log_liks
            .iter()
            .map(|&ll| fmath::exp(ll - max).max(LIKELIHOOD_FLOOR))
            .collect();
        let total = pairwise_sum(&probs);
        if !total.is_finite() || total <= 0.0 {
            return Err(CoreError::divergence("posterior normalizer is not positive"));
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
        Ok(Self { grid, probs, degenerate: false })
    }

    /// Index of the highest-probability cell (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Position of the highest-probability cell.
    pub fn map_estimate(&self) -> Vec3 {
        self.grid.position(self.argmax())
    }

    /// Probability-weighted mean position.
    pub fn mean_estimate(&self) -> Vec3 {
        let mut acc = ZERO3;
        for (i, &p) in self.probs.iter().enumerate() {
            acc = acc + self.grid.position(i) * p;
        }
        acc
    }

    pub fn sum(&self) -> f64 {
        pairwise_sum(&self.probs)
    }
}

/// WHEN log-likelihood of a single candidate cell.
///
/// Re-featurizes the prefix `positions[..=t_c]` of `traj` under the
/// hypothesis that `candidate` is the goal, runs the timing model on the
/// full prefix, and returns the log of the windowed timing likelihood at
/// `t_c`. Pure in its inputs, so callers may evaluate cells in any order or
/// in parallel without changing results.
pub fn when_cell_log_likelihood(
    model: &TimingModel,
    traj: &Trajectory,
    t_c: usize,
    candidate: Vec3,
    layout: &[Goal],
    config: &FeatureConfig,
    window: f64,
) -> Result<f64> {
    if t_c >= traj.len() {
        return Err(CoreError::range(alloc::format!(
            "onset {} out of range for trajectory of length {}",
            t_c,
            traj.len()
        )));
    }
    // Observation stops at the onset: the model only sees the prefix.
    let prefix = traj.prefix(t_c + 1)?;
    let feats = features::featurize(&prefix, candidate, layout, config)?;
    let cdf = model.forward_cdf(&feats)?;
    let pdf = pdf_from_cdf(&cdf);
    let lik = timing_likelihood(&pdf, t_c, traj.dt, window)?;
    Ok(fmath::ln(lik))
}

/// WHEN log-likelihoods for every cell of `grid`, serially.
pub fn when_log_likelihoods(
    model: &TimingModel,
    traj: &Trajectory,
    t_c: usize,
    grid: &GoalGrid,
    layout: &[Goal],
    config: &FeatureConfig,
    window: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        out.push(when_cell_log_likelihood(
            model,
            traj,
            t_c,
            grid.position(i),
            layout,
            config,
            window,
        )?);
    }
    Ok(out)
}

/// WHERE log-likelihoods from an observed release point.
///
/// Scores each cell `g` under the residual mixture: `density.log_at(release
/// - g)`. The mixture models the placement offset relative to the goal.
pub fn where_release_log_likelihoods(
    density: &GmmDensity,
    release: Vec3,
    grid: &GoalGrid,
) -> Result<Vec<f64>> {
    if !release.is_finite() {
        return Err(CoreError::invalid("release point must be finite"));
    }
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        out.push(density.log_at(release - grid.position(i)));
    }
    Ok(out)
}

/// WHERE log-likelihoods available already at correction onset.
///
/// Predicts the release point from the grasp snapshot with the placement
/// regressor, then scores cells as in [`where_release_log_likelihoods`]
/// using the prediction in place of the observation.
pub fn where_onset_log_likelihoods(
    mlp: &crate::spatial::MlpModel,
    density: &GmmDensity,
    grasp_point: Vec3,
    grasp_velocity: Vec3,
    grid: &GoalGrid,
) -> Result<Vec<f64>> {
    let predicted = mlp.predict(grasp_point, grasp_velocity)?;
    where_release_log_likelihoods(density, predicted, grid)
}

/// Per-cell convex combination `alpha * when + (1 - alpha) * where`.
///
/// The endpoints are special-cased so that a -inf on the zero-weighted side
/// cannot poison the result with `0 * -inf = NaN`: at `alpha == 0` the WHEN
/// term is ignored entirely, at `alpha == 1` the WHERE term is.
pub fn combine_log_likelihoods(when: &[f64], wher: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if when.len() != wher.len() {
        return Err(CoreError::shape(alloc::format!(
            "when has {} cells but where has {}",
            when.len(),
            wher.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::range("alpha must lie in [0, 1]"));
    }
    if alpha == 0.0 {
        return Ok(wher.to_vec());
    }
    if alpha == 1.0 {
        return Ok(when.to_vec());
    }
    Ok(when
        .iter()
        .zip(wher)
        .map(|(&a, &b)| alpha * a + (1.0 - alpha) * b)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Mat3;
    use crate::spatial::GmmModel;

    fn toy_grid() -> GoalGrid {
        GoalGrid::new(-0.02, 0.02, -0.03, 0.03, 0.01).unwrap()
    }

    #[test]
    fn board_grid_dimensions() {
        let g = GoalGrid::board_default();
        assert_eq!(g.nx, 41);
        assert_eq!(g.ny, 61);
        assert_eq!(g.len(), 2501);
        let p0 = g.position(0);
        assert!((p0.x - -0.2).abs() < 1e-12);
        assert!((p0.y - -0.3).abs() < 1e-12);
        let last = g.position(g.len() - 1);
        assert!((last.x - 0.2).abs() < 1e-12);
        assert!((last.y - 0.3).abs() < 1e-12);
        assert_eq!(p0.z, 0.0);
    }

    #[test]
    fn index_layout_x_fastest() {
        let g = toy_grid();
        assert_eq!(g.nx, 5);
        assert_eq!(g.ny, 7);
        // index = iy * nx + ix
        let p = g.position(2 * 5 + 3);
        assert!((p.x - (-0.02 + 3.0 * 0.01)).abs() < 1e-12);
        assert!((p.y - (-0.03 + 2.0 * 0.01)).abs() < 1e-12);
    }

    #[test]
    fn nearest_index_roundtrip() {
        let g = toy_grid();
        for i in 0..g.len() {
            let p = g.position(i);
            assert_eq!(g.nearest_index(p), Some(i));
            // Off-center but within half a step still maps back.
            let q = Vec3::new(p.x + 0.004, p.y - 0.004, 0.0);
            assert_eq!(g.nearest_index(q), Some(i));
        }
        assert_eq!(g.nearest_index(Vec3::new(1.0, 0.0, 0.0)), None);
    }

    #[test]
    fn posterior_matches_direct_normalization() {
        // Log-space pipeline must agree with naive exp-then-normalize when
        // magnitudes are tame.
        let g = toy_grid();
        let n = g.len();
        let log_liks: Vec<f64> = (0..n).map(|i| -0.01 * (i as f64) + 0.3).collect();
        let post = PosteriorMap::from_log_likelihoods(g, &log_liks).unwrap();
        let direct: Vec<f64> = log_liks.iter().map(|&v| fmath::exp(v)).collect();
        let total: f64 = direct.iter().sum();
        for (p, d) in post.probs.iter().zip(&direct) {
            assert!((p - d / total).abs() < 1e-9);
        }
        assert!(!post.degenerate);
    }

    #[test]
    fn posterior_sums_to_one() {
        let g = GoalGrid::board_default();
        let n = g.len();
        let log_liks: Vec<f64> = (0..n).map(|i| -((i % 37) as f64) * 13.7 - 500.0).collect();
        let post = PosteriorMap::from_log_likelihoods(g, &log_liks).unwrap();
        assert!((post.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn extreme_magnitudes_survive_shift() {
        // Raw exp would overflow/underflow; max-subtraction keeps it finite.
        let g = toy_grid();
        let mut log_liks = alloc::vec![-5000.0; g.len()];
        log_liks[7] = -4000.0;
        log_liks[8] = -4001.0;
        let post = PosteriorMap::from_log_likelihoods(g, &log_liks).unwrap();
        assert!(post.probs.iter().all(|p| p.is_finite() && *p > 0.0));
        assert!((post.sum() - 1.0).abs() < 1e-9);
        assert_eq!(post.argmax(), 7);
        let ratio = post.probs[7] / post.probs[8];
        assert!((fmath::ln(ratio) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn neg_inf_cells_get_floor_mass() {
        let g = toy_grid();
        let mut log_liks = alloc::vec![f64::NEG_INFINITY; g.len()];
        log_liks[0] = -2.0;
        let post = PosteriorMap::from_log_likelihoods(g, &log_liks).unwrap();
        assert!(!post.degenerate);
        assert!(post.probs[1] > 0.0);
        assert!(post.probs[0] > 0.999);
        assert!((post.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_neg_inf_degrades_to_uniform() {
        let g = toy_grid();
        let log_liks = alloc::vec![f64::NEG_INFINITY; g.len()];
        let post = PosteriorMap::from_log_likelihoods(g.clone(), &log_liks).unwrap();
        assert!(post.degenerate);
        let u = 1.0 / g.len() as f64;
        assert!(post.probs.iter().all(|&p| (p - u).abs() < 1e-15));
        assert!((post.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nan_log_likelihood_rejected() {
        let g = toy_grid();
        let mut log_liks = alloc::vec![0.0; g.len()];
        log_liks[3] = f64::NAN;
        assert!(PosteriorMap::from_log_likelihoods(g, &log_liks).is_err());
    }

    #[test]
    fn combine_endpoints_ignore_other_side() {
        let when = [1.0, f64::NEG_INFINITY, -3.0];
        let wher = [f64::NEG_INFINITY, 2.0, -1.0];
        let at0 = combine_log_likelihoods(&when, &wher, 0.0).unwrap();
        assert_eq!(at0, wher.to_vec());
        let at1 = combine_log_likelihoods(&when, &wher, 1.0).unwrap();
        assert_eq!(at1, when.to_vec());
        // No NaN from 0 * -inf at either endpoint.
        assert!(at0.iter().chain(at1.iter()).all(|v| !v.is_nan()));
    }

    #[test]
    fn combine_interior_is_convex() {
        let when = [0.0, -2.0, -4.0];
        let wher = [-10.0, -1.0, 0.0];
        let mix = combine_log_likelihoods(&when, &wher, 0.25).unwrap();
        for i in 0..3 {
            let expect = 0.25 * when[i] + 0.75 * wher[i];
            assert!((mix[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_rejects_bad_alpha_and_shape() {
        assert!(combine_log_likelihoods(&[0.0], &[0.0], -0.1).is_err());
        assert!(combine_log_likelihoods(&[0.0], &[0.0], 1.1).is_err());
        assert!(combine_log_likelihoods(&[0.0, 1.0], &[0.0], 0.5).is_err());
    }

    #[test]
    fn release_likelihood_peaks_at_true_goal() {
        // Single isotropic residual component centered at the origin: the
        // cell nearest the release point must win.
        let model = GmmModel {
            weights: alloc::vec![1.0],
            means: alloc::vec![ZERO3],
            covariances: alloc::vec![Mat3::identity_scaled(1e-4)],
        };
        let density = model.density().unwrap();
        let g = toy_grid();
        let release = Vec3::new(0.011, -0.009, 0.0);
        let lls = where_release_log_likelihoods(&density, release, &g).unwrap();
        let post = PosteriorMap::from_log_likelihoods(g.clone(), &lls).unwrap();
        let map = post.map_estimate();
        assert!((map.x - 0.01).abs() < 1e-12);
        assert!((map.y - -0.01).abs() < 1e-12);
        assert_eq!(g.nearest_index(release), Some(post.argmax()));
    }

    #[test]
    fn release_likelihood_rejects_non_finite() {
        let model = GmmModel {
            weights: alloc::vec![1.0],
            means: alloc::vec![ZERO3],
            covariances: alloc::vec![Mat3::identity_scaled(1e-4)],
        };
        let density = model.density().unwrap();
        let g = toy_grid();
        let bad = Vec3::new(f64::NAN, 0.0, 0.0);
        assert!(where_release_log_likelihoods(&density, bad, &g).is_err());
    }
}
