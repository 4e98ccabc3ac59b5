//! Rayon drivers. Work is distributed per cell or per seed, collected
//! in index order, and reduced with the core's fixed association order,
//! so results do not depend on the worker count.

use rayon::prelude::*;

use corrkit_core::evaluation::{kld_one_split, KldEval, KldEvalConfig, WhenGridFn};
use corrkit_core::features::FeatureConfig;
use corrkit_core::inference::{when_cell_log_likelihood, GoalGrid};
use corrkit_core::rng::derive_seed;
use corrkit_core::simulator::Dataset;
use corrkit_core::timing::TimingModel;
use corrkit_core::trajectory::{Goal, Trajectory};

use crate::error::{CliError, Result};

/// Builds a pool with `workers` threads (default: all cores).
pub fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::usage("worker count must be positive"));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))
}

/// Batched WHEN grid: cells evaluated in parallel, returned in cell
/// order. Signature matches [`WhenGridFn`], so `&when_grid_parallel`
/// plugs into the core evaluation drivers.
pub fn when_grid_parallel(
    model: &TimingModel,
    traj: &Trajectory,
    t_c: usize,
    grid: &GoalGrid,
    layout: &[Goal],
    fc: &FeatureConfig,
    window: f64,
) -> corrkit_core::Result<Vec<f64>> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            when_cell_log_likelihood(model, traj, t_c, grid.position(i), layout, fc, window)
        })
        .collect()
}

/// [`corrkit_core::evaluation::kld_split_eval`] with the split seeds
/// spread over the pool; aggregation matches the serial driver exactly.
pub fn kld_split_eval_parallel(
    ds: &Dataset,
    grid: &GoalGrid,
    cfg: &KldEvalConfig,
    fc: &FeatureConfig,
    when_fn: WhenGridFn,
) -> Result<KldEval> {
    if cfg.n_splits == 0 {
        return Err(CliError::config("need at least one split"));
    }
    let results: corrkit_core::Result<Vec<_>> = (0..cfg.n_splits)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.base_seed, i as u64);
            kld_one_split(ds, grid, cfg, fc, when_fn, seed)
        })
        .collect();
    let results = results?;
    let scored = results.iter().map(|(_, s)| s).sum();
    let per_seed = results.into_iter().map(|(m, _)| m).collect();
    Ok(KldEval::from_per_seed(per_seed, scored)?)
}
