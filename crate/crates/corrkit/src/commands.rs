//! Implementations behind the CLI subcommands. Each returns the files
//! it wrote so callers (and tests) can chase outputs without parsing
//! stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use corrkit_core::evaluation::{
    ablation_split_delta, mean_std, sequence_examples, timing_split_eval, TimingEval,
    TRAIN_STREAM,
};
use corrkit_core::features::{FeatureColumn, DEFAULT_COLUMNS};
use corrkit_core::inference::{
    combine_log_likelihoods, where_onset_log_likelihoods, where_release_log_likelihoods,
    PosteriorMap,
};
use corrkit_core::rng::derive_seed;
use corrkit_core::simulator::{
    gen_dataset, split_for_percentile, BoardLayout, Dataset, Episode, PERCENTILE_SETS,
};
use corrkit_core::spatial::{fit_gmm, train_placement, PlacementPair};
use corrkit_core::timing::{train_timing, TimingModel};
use corrkit_core::trajectory::Goal;

use crate::cli::{
    AblateArgs, EvaluateArgs, FeaturizeArgs, GoalMode, InferArgs, InferModel, SimulateArgs,
    SweepAlphaArgs, TrainSpatialArgs, TrainTimingArgs,
};
use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::io::checkpoint::{
    load_json, save_json, GmmCheckpoint, MlpCheckpoint, Provenance, TimingCheckpoint,
};
use crate::io::jsonl::{dataset_dir, load_dataset, save_dataset, DatasetManifest};
use crate::io::table::{pairs_csv, posterior_csv, provenance_line, write_csv, MetricsTable};
use crate::parallel::{kld_split_eval_parallel, when_grid_parallel};

/// Resolved invocation context shared by every command.
pub struct Ctx {
    pub config: RunConfig,
    /// Full effective-config hash; embedded in every output file.
    pub config_hash: String,
    /// Training-scoped hash (inference-only fields canonicalized);
    /// checkpoints carry and verify this one.
    pub model_hash: String,
    pub out_root: PathBuf,
}

impl Ctx {
    /// `--out` beats config `output_dir` beats `CORRKIT_OUT` beats
    /// `./corrkit-out`.
    pub fn new(config: RunConfig, out_flag: Option<PathBuf>) -> Self {
        let out_root = out_flag
            .or_else(|| config.output_dir.clone())
            .or_else(|| std::env::var_os("CORRKIT_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("corrkit-out"));
        let config_hash = config.hash();
        let model_hash = config.model_hash();
        Ctx { config, config_hash, model_hash, out_root }
    }

    fn provenance(&self, manifest: &DatasetManifest, split_seed: u64, train_seed: u64) -> Provenance {
        Provenance {
            schema_version: SCHEMA_VERSION,
            config_hash: self.model_hash.clone(),
            dataset_sha256: manifest.episodes_sha256.clone(),
            split_seed,
            train_seed,
        }
    }

    fn load_checked_dataset(&self, arg: &Path) -> Result<(Dataset, DatasetManifest)> {
        load_dataset(&dataset_dir(arg)?)
    }
}

fn percentile_tag(pct: f64) -> String {
    format!("p{:.0}", pct * 100.0)
}

pub fn run_simulate(ctx: &Ctx, args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    // Overrides were already folded into ctx.config by main, so the
    // hash matches the effective settings; args are kept for reporting.
    let _ = args;
    let profile = ctx.config.sim_profile();
    let layout = BoardLayout::standard();
    let ds = gen_dataset(&layout, &profile, ctx.config.dataset.n, ctx.config.dataset.seed)?;
    let dir = ctx.out_root.join("dataset");
    let manifest = save_dataset(&dir, &ds, &profile, &ctx.config_hash)?;
    println!(
        "simulate: {} episodes ({} corrected) -> {} [dataset {}]",
        manifest.n_episodes,
        manifest.n_corrected,
        dir.display(),
        &manifest.episodes_sha256[..12],
    );
    Ok(vec![dir.join("episodes.jsonl"), dir.join("manifest.json")])
}

fn episode_goal(ds: &Dataset, ep: &Episode, mode: GoalMode) -> Result<Goal> {
    let id = match mode {
        GoalMode::Intended => ep.intended_goal,
        GoalMode::Nominal => ep.trajectory.goal_id,
    };
    Ok(*ds.layout.goal(id)?)
}

pub fn run_featurize(ctx: &Ctx, args: &FeaturizeArgs) -> Result<Vec<PathBuf>> {
    let (ds, manifest) = ctx.load_checked_dataset(&args.dataset)?;
    let mut csv = provenance_line(&ctx.config_hash, &manifest.episodes_sha256);
    csv.push_str("episode,t,f1,f2,f3,f4,f5,f6,f7\n");
    for (i, ep) in ds.episodes.iter().enumerate() {
        let goal = episode_goal(&ds, ep, args.goal_mode)?;
        let feats = corrkit_core::features::featurize(
            &ep.trajectory,
            goal.position,
            &ds.layout.goals,
            &ctx.config.features,
        )?;
        for t in 0..feats.rows() {
            let row = feats.row(t);
            let _ = write!(csv, "{i},{t}");
            for v in row {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
    }
    let mode = match args.goal_mode {
        GoalMode::Intended => "intended",
        GoalMode::Nominal => "nominal",
    };
    let path = ctx.out_root.join(format!("features-{mode}.csv"));
    write_csv(&path, &csv)?;
    println!("featurize: {} episodes -> {}", ds.episodes.len(), path.display());
    Ok(vec![path])
}

pub fn run_train_timing(ctx: &Ctx, args: &TrainTimingArgs) -> Result<Vec<PathBuf>> {
    let (ds, manifest) = ctx.load_checked_dataset(&args.dataset)?;
    // --seed was already folded into the config by the dispatcher.
    let split_seed = ctx.config.splits.base_seed;
    let columns: Vec<FeatureColumn> = if args.boltzmann_only {
        vec![FeatureColumn::OptimalityRatio]
    } else {
        DEFAULT_COLUMNS.to_vec()
    };
    let mut tconfig = ctx.config.timing.clone();
    tconfig.input_dim = columns.len();

    let split = split_for_percentile(&ds, args.percentile, split_seed)?;
    let train = sequence_examples(&ds, &split.train, &ctx.config.features, Some(&columns))?;
    let val = sequence_examples(&ds, &split.val, &ctx.config.features, Some(&columns))?;
    let train_seed = derive_seed(split_seed, TRAIN_STREAM);
    let (model, report) =
        train_timing(&train, &val, &tconfig, &ctx.config.timing_train, train_seed)?;

    let ckpt = TimingCheckpoint::from_model(
        &model,
        ctx.provenance(&manifest, split_seed, train_seed),
        args.percentile,
        columns,
    );
    let suffix = if args.boltzmann_only { "-boltzmann" } else { "" };
    let path = ctx
        .out_root
        .join("models")
        .join(format!("timing-{}{suffix}.json", percentile_tag(args.percentile)));
    save_json(&path, &ckpt)?;
    println!(
        "train-timing: best epoch {} (val BCE {:.4}) -> {}",
        report.best_epoch,
        report.best_val_loss,
        path.display()
    );
    Ok(vec![path])
}

fn placement_pairs(ds: &Dataset, indices: &[usize]) -> Vec<PlacementPair> {
    indices
        .iter()
        .filter_map(|&i| {
            ds.episodes[i].correction.as_ref().map(|c| PlacementPair {
                grasp_point: c.grasp_point,
                grasp_velocity: c.grasp_velocity,
                release_point: c.release_point,
            })
        })
        .collect()
}

pub fn run_train_spatial(ctx: &Ctx, args: &TrainSpatialArgs) -> Result<Vec<PathBuf>> {
    let (ds, manifest) = ctx.load_checked_dataset(&args.dataset)?;
    let _ = args.seed; // folded into the config by the dispatcher
    let split_seed = ctx.config.splits.base_seed;
    let split = split_for_percentile(&ds, 1.0, split_seed)?;

    let train_pairs = placement_pairs(&ds, &split.train);
    let val_pairs = placement_pairs(&ds, &split.val);
    let mlp_seed = derive_seed(split_seed, 0x6d);
    let (mlp, report) = train_placement(
        &train_pairs,
        &val_pairs,
        &ctx.config.mlp,
        &ctx.config.mlp_train,
        mlp_seed,
    )?;

    let mut residuals = Vec::new();
    for &i in &split.train {
        if let Some(c) = &ds.episodes[i].correction {
            let goal = ds.layout.goal(ds.episodes[i].intended_goal)?;
            residuals.push(c.release_point - goal.position);
        }
    }
    let gmm_seed = derive_seed(split_seed, 0x67);
    let (gmm, gmm_report) = fit_gmm(&residuals, &ctx.config.gmm, gmm_seed)?;

    let models_dir = ctx.out_root.join("models");
    let mlp_path = models_dir.join("mlp.json");
    let gmm_path = models_dir.join("gmm.json");
    save_json(
        &mlp_path,
        &MlpCheckpoint::from_model(&mlp, ctx.provenance(&manifest, split_seed, mlp_seed)),
    )?;
    save_json(
        &gmm_path,
        &GmmCheckpoint::new(gmm, ctx.provenance(&manifest, split_seed, gmm_seed)),
    )?;
    println!(
        "train-spatial: mlp best epoch {} / gmm K={} -> {}",
        report.best_epoch,
        gmm_report.k_selected,
        models_dir.display()
    );
    Ok(vec![mlp_path, gmm_path])
}

fn load_timing(ctx: &Ctx, manifest: &DatasetManifest, path: &Path) -> Result<TimingModel> {
    let ckpt: TimingCheckpoint = load_json(path)?;
    ckpt.provenance
        .check_against(&ctx.model_hash, &manifest.episodes_sha256)?;
    ckpt.into_model()
}

pub fn run_infer(ctx: &Ctx, args: &InferArgs) -> Result<Vec<PathBuf>> {
    let (ds, manifest) = ctx.load_checked_dataset(&args.dataset)?;
    let ep = ds.episodes.get(args.episode).ok_or_else(|| {
        CliError::usage(format!(
            "episode {} out of range (dataset has {})",
            args.episode,
            ds.episodes.len()
        ))
    })?;
    let correction = ep.correction.as_ref().ok_or_else(|| {
        CliError::usage(format!("episode {} was never corrected", args.episode))
    })?;
    let alpha = ctx.config.alpha;
    let grid = ctx.config.grid.build()?;

    let needs_when = matches!(
        args.model,
        InferModel::When | InferModel::CombinedOnset | InferModel::CombinedRelease
    );
    let needs_gmm = !matches!(args.model, InferModel::When);
    let needs_mlp = matches!(args.model, InferModel::WhereOnset | InferModel::CombinedOnset);

    let when_lls = if needs_when {
        let path = args
            .timing
            .as_ref()
            .ok_or_else(|| CliError::usage("--timing checkpoint required for this model"))?;
        let model = load_timing(ctx, &manifest, path)?;
        Some(when_grid_parallel(
            &model,
            &ep.trajectory,
            correction.onset,
            &grid,
            &ds.layout.goals,
            &ctx.config.features,
            ctx.config.window,
        )?)
    } else {
        None
    };

    let where_lls = if needs_gmm {
        let gmm_path = args
            .gmm
            .as_ref()
            .ok_or_else(|| CliError::usage("--gmm checkpoint required for this model"))?;
        let gmm_ckpt: GmmCheckpoint = load_json(gmm_path)?;
        gmm_ckpt
            .provenance
            .check_against(&ctx.model_hash, &manifest.episodes_sha256)?;
        let density = gmm_ckpt.model.density()?;
        if needs_mlp {
            let mlp_path = args
                .mlp
                .as_ref()
                .ok_or_else(|| CliError::usage("--mlp checkpoint required for this model"))?;
            let mlp_ckpt: MlpCheckpoint = load_json(mlp_path)?;
            mlp_ckpt
                .provenance
                .check_against(&ctx.model_hash, &manifest.episodes_sha256)?;
            let mlp = mlp_ckpt.into_model()?;
            Some(where_onset_log_likelihoods(
                &mlp,
                &density,
                correction.grasp_point,
                correction.grasp_velocity,
                &grid,
            )?)
        } else {
            Some(where_release_log_likelihoods(
                &density,
                correction.release_point,
                &grid,
            )?)
        }
    } else {
        None
    };

    let lls = match (&when_lls, &where_lls) {
        (Some(when), None) => when.clone(),
        (None, Some(wher)) => wher.clone(),
        (Some(when), Some(wher)) => combine_log_likelihoods(when, wher, alpha)?,
        (None, None) => unreachable!("every model needs at least one term"),
    };
    let posterior = PosteriorMap::from_log_likelihoods(grid, &lls)?;

    let path = ctx
        .out_root
        .join("posteriors")
        .join(format!("ep{}-{}.csv", args.episode, args.model.name()));
    write_csv(
        &path,
        &posterior_csv(
            &posterior,
            &provenance_line(&ctx.config_hash, &manifest.episodes_sha256),
        ),
    )?;
    let map = posterior.map_estimate();
    println!(
        "infer: episode {} {} -> {} (MAP {:.3},{:.3})",
        args.episode,
        args.model.name(),
        path.display(),
        map.x,
        map.y
    );
    Ok(vec![path])
}

/// Checks `--check` checkpoints against the run config and dataset; any
/// mismatch aborts before the expensive part starts.
fn verify_checkpoints(ctx: &Ctx, manifest: &DatasetManifest, paths: &[PathBuf]) -> Result<()> {
    #[derive(serde::Deserialize)]
    struct AnyCheckpoint {
        provenance: Provenance,
    }
    for path in paths {
        let ckpt: AnyCheckpoint = load_json(path)?;
        ckpt.provenance
            .check_against(&ctx.model_hash, &manifest.episodes_sha256)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn run_evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<Vec<PathBuf>> {
    let (ds, manifest) = ctx.load_checked_dataset(&args.dataset)?;
    verify_checkpoints(ctx, &manifest, &args.check)?;

    let sets: Vec<f64> = if args.percentile.is_empty() {
        PERCENTILE_SETS.to_vec()
    } else {
        args.percentile.clone()
    };
    let timing_splits = ctx.config.splits.timing;
    let kld_splits = ctx.config.splits.kld;

    let mut table = MetricsTable::new();
    let mut summary = EvaluateSummary {
        config_hash: ctx.config_hash.clone(),
        dataset_sha256: manifest.episodes_sha256.clone(),
        base_seed: ctx.config.splits.base_seed,
        timing_splits,
        kld_splits: if args.timing_only { 0 } else { kld_splits },
        sets: Vec::new(),
    };

    for &pct in &sets {
        let evals = timing_evals(ctx, &ds, pct, timing_splits, false)?;
        let baseline = timing_evals(ctx, &ds, pct, timing_splits, true)?;
        let mut set_summary = SetSummary::from_evals(pct, &evals, &baseline);

        for (i, e) in evals.iter().enumerate() {
            table.push("f1", pct, "multi", i, e.f1.f1);
            table.push("ratio", pct, "multi", i, e.ratio);
            if let Some(mae) = e.mae.mae_seconds {
                table.push("mae_seconds", pct, "multi", i, mae);
            }
        }
        for (i, e) in baseline.iter().enumerate() {
            table.push("f1", pct, "boltzmann", i, e.f1.f1);
        }
        push_stats(&mut table, "f1", pct, "multi", &collect(&evals, |e| Some(e.f1.f1)));
        push_stats(&mut table, "ratio", pct, "multi", &collect(&evals, |e| Some(e.ratio)));
        push_stats(
            &mut table,
            "mae_seconds",
            pct,
            "multi",
            &collect(&evals, |e| e.mae.mae_seconds),
        );
        push_stats(&mut table, "f1", pct, "boltzmann", &collect(&baseline, |e| Some(e.f1.f1)));

        if !args.timing_only {
            let mut kld_cfg = ctx.config.kld_eval_config(pct);
            kld_cfg.n_splits = kld_splits;
            let grid = ctx.config.grid.build()?;
            let kld = kld_split_eval_parallel(
                &ds,
                &grid,
                &kld_cfg,
                &ctx.config.features,
                &when_grid_parallel,
            )?;
            for (i, m) in kld.per_seed.iter().enumerate() {
                table.push("kld", pct, "when", i, m.when);
                table.push("kld", pct, "where-onset", i, m.where_onset);
                table.push("kld", pct, "combined-onset", i, m.combined_onset);
                table.push("kld", pct, "where-release", i, m.where_release);
                table.push("kld", pct, "combined-release", i, m.combined_release);
            }
            push_stats(&mut table, "kld", pct, "when", &collect_kld(&kld.per_seed, |m| m.when));
            push_stats(
                &mut table,
                "kld",
                pct,
                "where-onset",
                &collect_kld(&kld.per_seed, |m| m.where_onset),
            );
            push_stats(
                &mut table,
                "kld",
                pct,
                "combined-onset",
                &collect_kld(&kld.per_seed, |m| m.combined_onset),
            );
            push_stats(
                &mut table,
                "kld",
                pct,
                "where-release",
                &collect_kld(&kld.per_seed, |m| m.where_release),
            );
            push_stats(
                &mut table,
                "kld",
                pct,
                "combined-release",
                &collect_kld(&kld.per_seed, |m| m.combined_release),
            );
            set_summary.kld = Some(kld.mean);
        }
        summary.sets.push(set_summary);
    }

    let metrics_dir = ctx.out_root.join("metrics");
    let csv_path = metrics_dir.join("metrics.csv");
    let json_path = metrics_dir.join("metrics.json");
    write_csv(
        &csv_path,
        &table.to_csv(&provenance_line(&ctx.config_hash, &manifest.episodes_sha256)),
    )?;
    save_json(&json_path, &summary)?;
    println!("evaluate: {} sets x {} timing splits -> {}", sets.len(), timing_splits, metrics_dir.display());
    Ok(vec![csv_path, json_path])
}

fn collect(evals: &[TimingEval], f: impl Fn(&TimingEval) -> Option<f64>) -> Vec<f64> {
    evals.iter().filter_map(f).collect()
}

fn collect_kld(
    means: &[corrkit_core::evaluation::KldMeans],
    f: impl Fn(&corrkit_core::evaluation::KldMeans) -> f64,
) -> Vec<f64> {
    means.iter().map(f).collect()
}

fn push_stats(table: &mut MetricsTable, metric: &str, pct: f64, model: &str, values: &[f64]) {
    if values.is_empty() {
        return;
    }
    let (mean, std) = mean_std(values);
    table.push(&format!("{metric}_mean"), pct, model, "-", mean);
    table.push(&format!("{metric}_std"), pct, model, "-", std);
}

/// One split-seed evaluation per index, spread over the pool; order is
/// the seed index, so aggregation is stable.
fn timing_evals(
    ctx: &Ctx,
    ds: &Dataset,
    pct: f64,
    n_splits: usize,
    boltzmann: bool,
) -> Result<Vec<TimingEval>> {
    use rayon::prelude::*;
    let columns: Option<Vec<FeatureColumn>> =
        boltzmann.then(|| vec![FeatureColumn::OptimalityRatio]);
    let mut tconfig = ctx.config.timing.clone();
    if boltzmann {
        tconfig.input_dim = 1;
    }
    let evals: corrkit_core::Result<Vec<TimingEval>> = (0..n_splits)
        .into_par_iter()
        .map(|i| {
            timing_split_eval(
                ds,
                pct,
                columns.as_deref(),
                &tconfig,
                &ctx.config.timing_train,
                &ctx.config.features,
                derive_seed(ctx.config.splits.base_seed, i as u64),
                ctx.config.decision_threshold,
            )
        })
        .collect();
    Ok(evals?)
}

#[derive(Debug, serde::Serialize)]
struct EvaluateSummary {
    config_hash: String,
    dataset_sha256: String,
    base_seed: u64,
    timing_splits: usize,
    kld_splits: usize,
    sets: Vec<SetSummary>,
}

#[derive(Debug, serde::Serialize)]
struct SetSummary {
    percentile: f64,
    f1_mean: f64,
    f1_std: f64,
    boltzmann_f1_mean: f64,
    boltzmann_f1_std: f64,
    ratio_mean: f64,
    ratio_std: f64,
    mae_mean: Option<f64>,
    mae_std: Option<f64>,
    mae_splits_missing: usize,
    kld: Option<corrkit_core::evaluation::KldMeans>,
}

impl SetSummary {
    fn from_evals(pct: f64, evals: &[TimingEval], baseline: &[TimingEval]) -> Self {
        let f1: Vec<f64> = evals.iter().map(|e| e.f1.f1).collect();
        let bf1: Vec<f64> = baseline.iter().map(|e| e.f1.f1).collect();
        let ratio: Vec<f64> = evals.iter().map(|e| e.ratio).collect();
        let mae: Vec<f64> = evals.iter().filter_map(|e| e.mae.mae_seconds).collect();
        let (f1_mean, f1_std) = mean_std(&f1);
        let (boltzmann_f1_mean, boltzmann_f1_std) = mean_std(&bf1);
        let (ratio_mean, ratio_std) = mean_std(&ratio);
        let (mae_mean, mae_std) = if mae.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&mae);
            (Some(m), Some(s))
        };
        SetSummary {
            percentile: pct,
            f1_mean,
            f1_std,
            boltzmann_f1_mean,
            boltzmann_f1_std,
            ratio_mean,
            ratio_std,
            mae_mean,
            mae_std,
            mae_splits_missing: evals.len() - mae.len(),
            kld: None,
        }
    }
}

fn parse_feature(name: &str) -> Result<Option<FeatureColumn>> {
    let col = match name {
        "f1" => FeatureColumn::PidVelCosine,
        "f2" => FeatureColumn::PidPosDistance,
        "f3" => FeatureColumn::GoalDirCosine,
        "f4" => FeatureColumn::VelocityConsistency,
        "f5" => FeatureColumn::Legibility,
        "f6" => FeatureColumn::GoalDistance,
        "f7" => FeatureColumn::OptimalityRatio,
        "dummy-control" => return Ok(None),
        other => {
            return Err(CliError::usage(format!(
                "unknown feature {other:?} (f1..f7 or dummy-control)"
            )))
        }
    };
    Ok(Some(col))
}

pub fn run_ablate(ctx: &Ctx, args: &AblateArgs) -> Result<Vec<PathBuf>> {
    let (ds, manifest) = ctx.load_checked_dataset(&args.dataset)?;
    let n_splits = ctx.config.splits.timing;

    // The control run measures the value of a constant extra column
    // (baseline includes it); real ablations drop the named column from
    // the full seven.
    let (baseline, ablated) = match parse_feature(&args.feature)? {
        None => {
            let mut with_dummy = DEFAULT_COLUMNS.to_vec();
            with_dummy.push(FeatureColumn::ConstantDummy);
            (with_dummy, DEFAULT_COLUMNS.to_vec())
        }
        Some(col) => {
            let without: Vec<FeatureColumn> =
                DEFAULT_COLUMNS.iter().copied().filter(|&c| c != col).collect();
            (DEFAULT_COLUMNS.to_vec(), without)
        }
    };

    let deltas = ablation_split_delta(
        &ds,
        args.percentile,
        &baseline,
        &ablated,
        &ctx.config.timing,
        &ctx.config.timing_train,
        &ctx.config.features,
        n_splits,
        ctx.config.splits.base_seed,
        ctx.config.decision_threshold,
    )?;
    let rows: Vec<(f64, f64)> =
        deltas.iter().enumerate().map(|(i, &d)| (i as f64, d)).collect();
    let path = ctx
        .out_root
        .join("ablation")
        .join(format!("delta-{}.csv", args.feature));
    write_csv(
        &path,
        &pairs_csv(
            ("split", "delta_f1"),
            &rows,
            &provenance_line(&ctx.config_hash, &manifest.episodes_sha256),
        ),
    )?;
    let (mean, std) = mean_std(&deltas);
    println!(
        "ablate {}: mean dF1 {mean:.4} (std {std:.4}, {} splits) -> {}",
        args.feature,
        deltas.len(),
        path.display()
    );
    Ok(vec![path])
}

pub fn run_sweep_alpha(ctx: &Ctx, args: &SweepAlphaArgs) -> Result<Vec<PathBuf>> {
    let (ds, manifest) = ctx.load_checked_dataset(&args.dataset)?;
    let grid = ctx.config.grid.build()?;
    // The sweep is anchored at the 80% set, where timing information is
    // present but not saturated.
    let cfg = ctx.config.kld_eval_config(0.8);
    let alphas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let results = corrkit_core::evaluation::alpha_sweep(
        &ds,
        &grid,
        &cfg,
        &ctx.config.features,
        &when_grid_parallel,
        &alphas,
    )?;
    let path = ctx.out_root.join("alpha").join("alpha-sweep.csv");
    write_csv(
        &path,
        &pairs_csv(
            ("alpha", "kld_combined_onset"),
            &results,
            &provenance_line(&ctx.config_hash, &manifest.episodes_sha256),
        ),
    )?;
    let best = results
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("sweep is nonempty");
    println!(
        "sweep-alpha: minimum KLD {:.4} at alpha {:.1} -> {}",
        best.1,
        best.0,
        path.display()
    );
    Ok(vec![path])
}
