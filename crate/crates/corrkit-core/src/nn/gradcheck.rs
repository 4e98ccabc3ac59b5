//! Central-difference gradient checking.

use alloc::vec::Vec;

use crate::Result;

/// Worst coordinate found by [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// Per-coordinate relative error is |a - n| / max(1, |a| + |n|), which
/// behaves like an absolute error near zero and a relative error for
/// large gradients. `loss` must be deterministic in `params`; stochastic
/// pieces (dropout) have to be frozen by the caller.
pub fn grad_check(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<GradCheckReport> {
    assert_eq!(params.len(), analytic.len());
    let mut work: Vec<f64> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: params.len(),
    };
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = loss(&work)?;
        work[i] = orig - h;
        let minus = loss(&work)?;
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let denom = 1.0f64.max(a.abs() + numeric.abs());
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}
