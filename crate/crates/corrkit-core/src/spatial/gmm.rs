//! Gaussian mixture over release residuals, fitted with EM.
//!
//! Components use full 3x3 covariances with a diagonal floor; the
//! number of components is chosen by BIC over a candidate range, with
//! k-means++-style seeding for the EM initialization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::geom::{Mat3, Vec3};
use crate::matrix::pairwise_sum;
use crate::rng::{derive_seed, Rng};
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub k_min: usize,
    pub k_max: usize,
    pub max_iters: usize,
    /// Relative log-likelihood change treated as converged.
    pub tol: f64,
    /// Added to covariance diagonals after every M step.
    pub cov_floor: f64,
    /// A component weight below this triggers one reinitialization.
    pub weight_floor: f64,
    /// Fallback component count when BIC selection fails outright.
    pub fallback_k: usize,
    /// Minimum samples per candidate component (candidates needing
    /// more data than available are skipped).
    pub min_samples_per_component: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            k_min: 1,
            k_max: 5,
            max_iters: 300,
            tol: 1e-9,
            cov_floor: 1e-6,
            weight_floor: 1e-6,
            fallback_k: 2,
            min_samples_per_component: 10,
        }
    }
}

/// Fitted mixture: weights sum to 1, covariances are positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec3>,
    pub covariances: Vec<Mat3>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Precomputes Cholesky factors for repeated density evaluation.
    pub fn density(&self) -> Result<GmmDensity> {
        let mut chol = Vec::with_capacity(self.k());
        let mut log_norm = Vec::with_capacity(self.k());
        for (w, cov) in self.weights.iter().zip(&self.covariances) {
            let l = cov.cholesky()?;
            log_norm.push(fmath::ln(*w) - 0.5 * (3.0 * fmath::LN_2PI + l.log_det_from_cholesky()));
            chol.push(l);
        }
        Ok(GmmDensity {
            means: self.means.clone(),
            chol,
            log_norm,
        })
    }

    /// Log density at a point (one-off; use [`GmmModel::density`] in
    /// loops).
    pub fn log_density(&self, x: Vec3) -> Result<f64> {
        Ok(self.density()?.log_at(x))
    }
}

/// Prepared evaluator for a fitted mixture.
pub struct GmmDensity {
    means: Vec<Vec3>,
    chol: Vec<Mat3>,
    log_norm: Vec<f64>,
}

impl GmmDensity {
    pub fn log_at(&self, x: Vec3) -> f64 {
        let mut terms = [0.0; 8];
        let mut heap_terms;
        let k = self.means.len();
        let slice: &mut [f64] = if k <= 8 {
            &mut terms[..k]
        } else {
            heap_terms = vec![0.0; k];
            &mut heap_terms
        };
        for i in 0..k {
            let y = self.chol[i].forward_solve(x - self.means[i]);
            slice[i] = self.log_norm[i] - 0.5 * y.norm_sq();
        }
        crate::fmath::log_sum_exp(slice)
    }
}

/// Selection diagnostics from [`fit_gmm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmReport {
    pub k_selected: usize,
    /// (k, BIC) for every candidate that could be fitted.
    pub bic_by_k: Vec<(usize, f64)>,
    /// Log-likelihood per EM iteration of the selected fit.
    pub loglik_trace: Vec<f64>,
    /// True when BIC selection failed and the fallback size was used.
    pub used_fallback: bool,
}

struct EmFit {
    model: GmmModel,
    loglik: f64,
    trace: Vec<f64>,
}

fn kmeanspp_means(samples: &[Vec3], k: usize, rng: &mut Rng) -> Vec<Vec3> {
    let mut means = Vec::with_capacity(k);
    means.push(samples[rng.below(samples.len())]);
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|&s| (s - means[0]).norm_sq())
        .collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut chosen = samples.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                target -= d;
                if target < 0.0 {
                    chosen = i;
                    break;
                }
            }
            samples[chosen]
        } else {
            samples[rng.below(samples.len())]
        };
        means.push(next);
        for (d, &s) in d2.iter_mut().zip(samples) {
            *d = d.min((s - next).norm_sq());
        }
    }
    means
}

fn global_covariance(samples: &[Vec3], floor: f64) -> Mat3 {
    let n = samples.len() as f64;
    let mut mean = Vec3::new(0.0, 0.0, 0.0);
    for &s in samples {
        mean = mean + s;
    }
    mean = mean * (1.0 / n);
    let mut cov = Mat3::identity_scaled(0.0);
    for &s in samples {
        cov.add_scaled(&Mat3::outer(s - mean), 1.0 / n);
    }
    cov.add_scaled(&Mat3::identity_scaled(floor), 1.0);
    cov
}

fn em_once(samples: &[Vec3], k: usize, options: &GmmOptions, seed: u64) -> Result<EmFit> {
    let n = samples.len();
    let mut rng = Rng::new(seed);
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: kmeanspp_means(samples, k, &mut rng),
        covariances: vec![global_covariance(samples, options.cov_floor); k],
    };

    let mut resp = vec![0.0; n * k];
    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;

    for _iter in 0..options.max_iters {
        // E step. density.log_norm already folds in ln(weight).
        let density = model.density()?;
        let mut sample_ll = Vec::with_capacity(n);
        let mut comp_scores = vec![0.0; k];
        for (i, &x) in samples.iter().enumerate() {
            for c in 0..k {
                let y = density.chol[c].forward_solve(x - model.means[c]);
                comp_scores[c] = density.log_norm[c] - 0.5 * y.norm_sq();
            }
            let lse = fmath::log_sum_exp(&comp_scores);
            sample_ll.push(lse);
            for c in 0..k {
                resp[i * k + c] = fmath::exp(comp_scores[c] - lse);
            }
        }
        let ll = pairwise_sum(&sample_ll);
        if !ll.is_finite() {
            return Err(CoreError::divergence("non-finite EM log-likelihood"));
        }
        trace.push(ll);

        // M step.
        for c in 0..k {
            let mut nk = 0.0;
            let mut mean = Vec3::new(0.0, 0.0, 0.0);
            for (i, &x) in samples.iter().enumerate() {
                let r = resp[i * k + c];
                nk += r;
                mean = mean + x * r;
            }
            let weight = nk / n as f64;
            if !(weight.is_finite()) || weight < options.weight_floor {
                return Err(CoreError::divergence(format!(
                    "mixture component {c} collapsed (weight {weight:.3e})"
                )));
            }
            mean = mean * (1.0 / nk);
            let mut cov = Mat3::identity_scaled(0.0);
            for (i, &x) in samples.iter().enumerate() {
                let r = resp[i * k + c];
                cov.add_scaled(&Mat3::outer(x - mean), r / nk);
            }
            cov.add_scaled(&Mat3::identity_scaled(options.cov_floor), 1.0);
            model.weights[c] = weight;
            model.means[c] = mean;
            model.covariances[c] = cov;
        }

        if (ll - prev_ll).abs() <= options.tol * (1.0 + ll.abs()) {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;
    }

    Ok(EmFit {
        model,
        loglik: prev_ll,
        trace,
    })
}

fn fit_k(samples: &[Vec3], k: usize, options: &GmmOptions, seed: u64) -> Result<EmFit> {
    // One reinitialization on collapse, then give up on this k.
    match em_once(samples, k, options, derive_seed(seed, 0)) {
        Ok(fit) => Ok(fit),
        Err(CoreError::Divergence(_)) => em_once(samples, k, options, derive_seed(seed, 1)),
        Err(e) => Err(e),
    }
}

/// Free parameters of a k-component full-covariance 3-D mixture:
/// (k - 1) weights + 3k means + 6k covariance entries.
fn param_count(k: usize) -> usize {
    10 * k - 1
}

/// Fits mixtures for every candidate component count and selects by
/// BIC (lower is better). Falls back to `options.fallback_k` when every
/// candidate fails to fit.
pub fn fit_gmm(samples: &[Vec3], options: &GmmOptions, seed: u64) -> Result<(GmmModel, GmmReport)> {
    if options.k_min == 0 || options.k_min > options.k_max {
        return Err(CoreError::invalid("gmm needs 1 <= k_min <= k_max"));
    }
    if samples.len() < options.min_samples_per_component * options.k_min {
        return Err(CoreError::invalid(format!(
            "{} samples below the minimum {} for k = {}",
            samples.len(),
            options.min_samples_per_component * options.k_min,
            options.k_min
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(CoreError::invalid("non-finite residual sample"));
    }

    let ln_n = fmath::ln(samples.len() as f64);
    let mut best: Option<(f64, EmFit, usize)> = None;
    let mut bic_by_k = Vec::new();
    for k in options.k_min..=options.k_max {
        if samples.len() < options.min_samples_per_component * k {
            break;
        }
        let fit = match fit_k(samples, k, options, derive_seed(seed, k as u64)) {
            Ok(fit) => fit,
            Err(CoreError::Divergence(_)) => continue,
            Err(e) => return Err(e),
        };
        let bic = -2.0 * fit.loglik + param_count(k) as f64 * ln_n;
        bic_by_k.push((k, bic));
        let better = match &best {
            None => true,
            Some((best_bic, _, _)) => bic < *best_bic,
        };
        if better {
            best = Some((bic, fit, k));
        }
    }

    match best {
        Some((_, fit, k)) => Ok((
            fit.model,
            GmmReport {
                k_selected: k,
                bic_by_k,
                loglik_trace: fit.trace,
                used_fallback: false,
            },
        )),
        None => {
            // Every candidate collapsed; one last attempt at the
            // documented fallback size before giving up.
            let k = options.fallback_k.clamp(options.k_min, options.k_max);
            let fit = fit_k(samples, k, options, derive_seed(seed, 0xFA11))?;
            Ok((
                fit.model,
                GmmReport {
                    k_selected: k,
                    bic_by_k,
                    loglik_trace: fit.trace,
                    used_fallback: true,
                },
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{gaussian3_log_density, gaussian3_sample};

    fn sample_blob(rng: &mut Rng, mean: Vec3, cov: Mat3, n: usize, out: &mut Vec<Vec3>) {
        let chol = cov.cholesky().unwrap();
        for _ in 0..n {
            out.push(gaussian3_sample(rng, mean, &chol));
        }
    }

    #[test]
    fn recovers_a_single_gaussian() {
        let mut rng = Rng::new(1);
        let mean = Vec3::new(0.01, -0.02, 0.005);
        let cov = Mat3::diag(4e-4, 2e-4, 1e-4);
        let mut samples = Vec::new();
        sample_blob(&mut rng, mean, cov, 4000, &mut samples);
        let (model, report) = fit_gmm(&samples, &GmmOptions::default(), 3).unwrap();
        assert_eq!(report.k_selected, 1, "bic: {:?}", report.bic_by_k);
        assert!(model.means[0].dist(mean) < 0.002);
        // Covariance within 15% on the diagonal.
        for i in 0..3 {
            let got = model.covariances[0].0[i][i];
            let want = cov.0[i][i];
            assert!((got - want).abs() < 0.15 * want, "var[{i}] {got} vs {want}");
        }
    }

    #[test]
    fn separated_pair_selects_two_components() {
        let mut rng = Rng::new(2);
        let cov = Mat3::identity_scaled(1.5e-4);
        let m0 = Vec3::new(-0.03, 0.0, 0.0);
        let m1 = Vec3::new(0.03, 0.01, 0.0);
        let mut samples = Vec::new();
        sample_blob(&mut rng, m0, cov, 1500, &mut samples);
        sample_blob(&mut rng, m1, cov, 1500, &mut samples);
        let (model, report) = fit_gmm(&samples, &GmmOptions::default(), 5).unwrap();
        assert_eq!(report.k_selected, 2, "bic: {:?}", report.bic_by_k);
        // Means recovered within 5 mm, in either order.
        let mut d = [
            model.means[0].dist(m0) + model.means[1].dist(m1),
            model.means[0].dist(m1) + model.means[1].dist(m0),
        ];
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(d[0] < 0.01, "mean error {}", d[0]);
        let wsum: f64 = model.weights.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn loglik_trace_is_monotone() {
        let mut rng = Rng::new(3);
        let mut samples = Vec::new();
        sample_blob(
            &mut rng,
            Vec3::new(0.0, 0.0, 0.0),
            Mat3::diag(2e-4, 1e-4, 1e-4),
            800,
            &mut samples,
        );
        sample_blob(
            &mut rng,
            Vec3::new(0.05, 0.0, 0.0),
            Mat3::diag(1e-4, 2e-4, 1e-4),
            800,
            &mut samples,
        );
        let (_, report) = fit_gmm(&samples, &GmmOptions::default(), 7).unwrap();
        for w in report.loglik_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()),
                "trace decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(report.loglik_trace.len() >= 2);
    }

    #[test]
    fn density_matches_manual_mixture() {
        let model = GmmModel {
            weights: vec![0.3, 0.7],
            means: vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.02, 0.0, 0.0)],
            covariances: vec![Mat3::identity_scaled(1e-4), Mat3::identity_scaled(4e-4)],
        };
        let x = Vec3::new(0.01, 0.005, -0.002);
        let manual = fmath::ln(
            0.3 * fmath::exp(gaussian3_log_density(x, model.means[0], &model.covariances[0]).unwrap())
                + 0.7 * fmath::exp(
                    gaussian3_log_density(x, model.means[1], &model.covariances[1]).unwrap(),
                ),
        );
        let got = model.log_density(x).unwrap();
        assert!((got - manual).abs() < 1e-12);
    }

    #[test]
    fn fit_is_seed_deterministic() {
        let mut rng = Rng::new(4);
        let mut samples = Vec::new();
        sample_blob(
            &mut rng,
            Vec3::new(0.0, 0.01, 0.0),
            Mat3::diag(3e-4, 2e-4, 1e-4),
            600,
            &mut samples,
        );
        let (a, ra) = fit_gmm(&samples, &GmmOptions::default(), 9).unwrap();
        let (b, rb) = fit_gmm(&samples, &GmmOptions::default(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn rejects_insufficient_samples() {
        let samples = vec![Vec3::new(0.0, 0.0, 0.0); 9];
        let err = fit_gmm(&samples, &GmmOptions::default(), 1).unwrap_err();
        assert!(matches!(err, CoreError::InvalidArgument(_)));
    }

    #[test]
    fn identical_points_stay_positive_definite() {
        // The covariance floor keeps EM alive on zero-variance data.
        let samples = vec![Vec3::new(0.01, 0.02, 0.0); 40];
        let options = GmmOptions {
            k_max: 1,
            ..GmmOptions::default()
        };
        let (model, _) = fit_gmm(&samples, &options, 2).unwrap();
        assert!(model.covariances[0].cholesky().is_ok());
        assert!(model.means[0].dist(Vec3::new(0.01, 0.02, 0.0)) < 1e-9);
    }
}
