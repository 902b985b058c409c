//! Experiment orchestration: hyperparameter tuning, episode batches, the
//! initial-bid sweep, and the CSV outputs.
//!
//! Seed layout: evaluation episode `i` uses stream `i` of the master seed,
//! tuning episode `i` uses stream `TUNING_STREAM_OFFSET + i`. Every algorithm
//! in a batch therefore sees the same opportunity streams, and the sweep
//! reuses the evaluation streams at every initial bid.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::auction::{run_episode, EnvError, EpisodeResult, EpisodeSeed};
use crate::baselines::{
    default_oracle_grid, hindsight_optimal_constant_bid, ConstantBid, DogdConfig, DogdPacer, LearningRate,
    OracleReport, PidConfig, PidPacer, FULL_UTILIZATION,
};
use crate::config::{Algorithm, ConfigError, ExperimentConfig};
use crate::metrics::{BatchSummary, EpisodeMetrics};
use crate::strategy::{BidStrategy, MpcCostCap, MpcMaxDelivery};

/// First line of every CSV the harness writes.
pub const SCHEMA_LINE: &str = "# pacekit-schema v1";
pub const TRACE_HEADER: &str =
    "algorithm,episode,cycle,bid,bid_rescaled,target_spend,actual_spend,conversions,remaining_budget";
pub const SUMMARY_HEADER: &str = "algorithm,bur_mean,bur_std,impressions_mean,cpv_mean,cpv_std,bv_mean";
pub const SWEEP_HEADER: &str = "algorithm,initial_bid,cpv_mean,bur_mean";
pub const ORACLE_HEADER: &str = "bid,bur_mean,spend_mean,cpv_mean";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 2 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(ConfigError::Read { .. }) | HarnessError::Io { .. } => 2,
            HarnessError::Config(_) | HarnessError::Env(_) => 1,
        }
    }
}

/// Hyperparameters frozen after tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TunedParams {
    pub pid: PidConfig,
    pub dogd: DogdConfig,
    /// Hindsight oracle over the evaluation episodes, when requested.
    pub oracle: Option<OracleReport>,
}

pub fn evaluation_seeds(cfg: &ExperimentConfig) -> Vec<EpisodeSeed> {
    (0..cfg.episodes as u64).map(|i| EpisodeSeed::evaluation(cfg.seed, i)).collect()
}

pub fn tuning_seeds(cfg: &ExperimentConfig) -> Vec<EpisodeSeed> {
    (0..cfg.tuning.episodes as u64).map(|i| EpisodeSeed::tuning(cfg.seed, i)).collect()
}

fn build_strategy(
    algorithm: Algorithm,
    cfg: &ExperimentConfig,
    tuned: &TunedParams,
    initial_bid: f64,
) -> Result<Box<dyn BidStrategy>, HarnessError> {
    Ok(match algorithm {
        Algorithm::Mpc => Box::new(MpcMaxDelivery::new(cfg.mpc_config(initial_bid))),
        Algorithm::MpcCostCap => {
            let cap = cfg.campaign.cost_cap.ok_or_else(|| ConfigError::InvalidValue {
                key: "campaign.cost_cap".into(),
                reason: "required by mpc_cost_cap".into(),
            })?;
            Box::new(MpcCostCap::new(cfg.mpc_config(initial_bid), cfg.campaign.budget, cap))
        }
        Algorithm::Pid => Box::new(PidPacer::new(tuned.pid.clone(), initial_bid)),
        Algorithm::Dogd => Box::new(DogdPacer::new(tuned.dogd.clone(), initial_bid)),
        Algorithm::Constant => Box::new(ConstantBid::new(cfg.constant_bid.unwrap_or(initial_bid))),
        Algorithm::Optimal => {
            let oracle = tuned.oracle.as_ref().ok_or_else(|| ConfigError::InvalidValue {
                key: "experiment.algorithms".into(),
                reason: "optimal requires the hindsight oracle".into(),
            })?;
            Box::new(ConstantBid::new(oracle.bid))
        }
    })
}

/// Runs one algorithm over the given episodes. Results are in seed order.
pub fn run_batch(
    algorithm: Algorithm,
    cfg: &ExperimentConfig,
    tuned: &TunedParams,
    seeds: &[EpisodeSeed],
    initial_bid: f64,
) -> Result<Vec<EpisodeResult>, HarnessError> {
    // fail fast on configuration problems before fanning out
    build_strategy(algorithm, cfg, tuned, initial_bid)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let mut strategy = build_strategy(algorithm, cfg, tuned, initial_bid)?;
            Ok(run_episode(&mut strategy, &cfg.campaign, &cfg.market, seed)?)
        })
        .collect()
}

pub fn summarize(results: &[EpisodeResult]) -> Option<BatchSummary> {
    let metrics: Vec<EpisodeMetrics> = results.iter().map(EpisodeMetrics::of).collect();
    BatchSummary::of(&metrics)
}

/// Lowest mean CPV among candidates with mean BUR at full utilization; if
/// none reaches it, the candidate with the highest BUR.
fn pick_best<T: Clone>(scored: &[(T, BatchSummary)]) -> Option<T> {
    let feasible = scored
        .iter()
        .filter(|(_, s)| s.bur.mean >= FULL_UTILIZATION && s.cpv.is_some())
        .min_by(|a, b| a.1.cpv.unwrap().mean.total_cmp(&b.1.cpv.unwrap().mean));
    feasible
        .or_else(|| scored.iter().max_by(|a, b| a.1.bur.mean.total_cmp(&b.1.bur.mean)))
        .map(|(t, _)| t.clone())
}

fn score(
    algorithm: Algorithm,
    cfg: &ExperimentConfig,
    tuned: &TunedParams,
    seeds: &[EpisodeSeed],
) -> Result<BatchSummary, HarnessError> {
    let results = run_batch(algorithm, cfg, tuned, seeds, cfg.campaign.initial_bid)?;
    Ok(summarize(&results).expect("nonempty tuning block"))
}

/// Grid search over PID gains on the tuning block.
pub fn tune_pid(cfg: &ExperimentConfig) -> Result<PidConfig, HarnessError> {
    let seeds = tuning_seeds(cfg);
    let t = &cfg.tuning;
    let mut candidates = Vec::new();
    for &kp in &t.pid_kp_grid {
        for &ki in &t.pid_ki_grid {
            for &kd in &t.pid_kd_grid {
                candidates.push(PidConfig { kp, ki, kd, ..cfg.pid.clone() });
            }
        }
    }
    let scored = candidates
        .into_iter()
        .map(|pid| {
            let tuned = TunedParams { pid: pid.clone(), dogd: cfg.dogd.clone(), oracle: None };
            Ok((pid, score(Algorithm::Pid, cfg, &tuned, &seeds)?))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(pick_best(&scored).unwrap_or_else(|| cfg.pid.clone()))
}

/// Grid search over the DOGD step size on the tuning block.
pub fn tune_dogd(cfg: &ExperimentConfig) -> Result<DogdConfig, HarnessError> {
    let seeds = tuning_seeds(cfg);
    let scored = cfg
        .tuning
        .dogd_eps_grid
        .iter()
        .map(|&eps| {
            let learning_rate = match cfg.dogd.learning_rate {
                LearningRate::Constant(_) => LearningRate::Constant(eps),
                LearningRate::InverseSqrt(_) => LearningRate::InverseSqrt(eps),
            };
            let dogd = DogdConfig { learning_rate, ..cfg.dogd.clone() };
            let tuned = TunedParams { pid: cfg.pid.clone(), dogd: dogd.clone(), oracle: None };
            Ok((dogd, score(Algorithm::Dogd, cfg, &tuned, &seeds)?))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(pick_best(&scored).unwrap_or_else(|| cfg.dogd.clone()))
}

/// Hindsight constant-bid oracle on the evaluation block.
pub fn run_oracle(cfg: &ExperimentConfig) -> Result<OracleReport, HarnessError> {
    let grid = cfg.tuning.oracle_grid.clone().unwrap_or_else(|| default_oracle_grid(&cfg.market));
    Ok(hindsight_optimal_constant_bid(
        &cfg.market,
        &cfg.campaign,
        &evaluation_seeds(cfg),
        &grid,
        cfg.tuning.oracle_refine,
    )?)
}

/// Tunes what the selected algorithms need and freezes it.
pub fn prepare(cfg: &ExperimentConfig) -> Result<TunedParams, HarnessError> {
    cfg.validate()?;
    let wants = |a| cfg.algorithms.contains(&a);
    let pid = if cfg.tuning.enabled && wants(Algorithm::Pid) { tune_pid(cfg)? } else { cfg.pid.clone() };
    let dogd = if cfg.tuning.enabled && wants(Algorithm::Dogd) { tune_dogd(cfg)? } else { cfg.dogd.clone() };
    let oracle = if wants(Algorithm::Optimal) { Some(run_oracle(cfg)?) } else { None };
    Ok(TunedParams { pid, dogd, oracle })
}

#[derive(Debug, Clone)]
pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    pub summary: BatchSummary,
    pub results: Vec<EpisodeResult>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub tuned: TunedParams,
    pub runs: Vec<AlgorithmRun>,
}

impl BenchmarkReport {
    pub fn run(&self, algorithm: Algorithm) -> Option<&AlgorithmRun> {
        self.runs.iter().find(|r| r.algorithm == algorithm)
    }
}

/// Evaluation batch for every selected algorithm with frozen parameters.
pub fn evaluate(cfg: &ExperimentConfig, tuned: &TunedParams) -> Result<Vec<AlgorithmRun>, HarnessError> {
    let seeds = evaluation_seeds(cfg);
    cfg.algorithms
        .iter()
        .map(|&algorithm| {
            let results = run_batch(algorithm, cfg, tuned, &seeds, cfg.campaign.initial_bid)?;
            let summary = summarize(&results).expect("episodes >= 1");
            Ok(AlgorithmRun { algorithm, summary, results })
        })
        .collect()
}

/// Tune, then evaluate every selected algorithm.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkReport, HarnessError> {
    let tuned = prepare(cfg)?;
    let runs = evaluate(cfg, &tuned)?;
    Ok(BenchmarkReport { tuned, runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub initial_bid: f64,
    pub cpv_mean: Option<f64>,
    pub bur_mean: f64,
}

/// Re-runs each algorithm at every initial bid with the tuned parameters
/// held fixed.
pub fn sweep_initial_bid(cfg: &ExperimentConfig, tuned: &TunedParams) -> Result<Vec<SweepRow>, HarnessError> {
    if cfg.sweep_initial_bids.is_empty() {
        return Err(ConfigError::InvalidValue {
            key: "sweep.initial_bids".into(),
            reason: "must not be empty".into(),
        }
        .into());
    }
    let seeds = evaluation_seeds(cfg);
    let mut rows = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &b0 in &cfg.sweep_initial_bids {
            let results = run_batch(algorithm, cfg, tuned, &seeds, b0)?;
            let s = summarize(&results).expect("episodes >= 1");
            rows.push(SweepRow {
                algorithm,
                initial_bid: b0,
                cpv_mean: s.cpv.map(|c| c.mean),
                bur_mean: s.bur.mean,
            });
        }
    }
    Ok(rows)
}

/// Relative spread `(max - min) / min` of CPV across sweep rows of one
/// algorithm. `None` if any row lacks a CPV.
pub fn cpv_spread(rows: &[SweepRow], algorithm: Algorithm) -> Option<f64> {
    let cpvs: Option<Vec<f64>> = rows.iter().filter(|r| r.algorithm == algorithm).map(|r| r.cpv_mean).collect();
    let cpvs = cpvs?;
    let min = cpvs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = cpvs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min.is_finite() && min > 0.0).then(|| (max - min) / min)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn render_summary_csv(runs: &[AlgorithmRun]) -> String {
    let mut out = format!("{SCHEMA_LINE}\n{SUMMARY_HEADER}\n");
    for run in runs {
        let s = &run.summary;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            run.algorithm,
            s.bur.mean,
            s.bur.std,
            s.impressions.mean,
            opt(s.cpv.map(|c| c.mean)),
            opt(s.cpv.map(|c| c.std)),
            s.bv.mean
        );
    }
    out
}

pub fn render_trace_csv(runs: &[AlgorithmRun]) -> String {
    let mut out = format!("{SCHEMA_LINE}\n{TRACE_HEADER}\n");
    for run in runs {
        for (episode, result) in run.results.iter().enumerate() {
            let max_bid = result.cycles.iter().map(|c| c.observation.bid).fold(0.0, f64::max);
            for c in &result.cycles {
                let o = &c.observation;
                let rescaled = if max_bid > 0.0 { o.bid / max_bid } else { 0.0 };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    run.algorithm,
                    episode,
                    o.cycle_index,
                    o.bid,
                    rescaled,
                    o.target_spend,
                    o.spend,
                    o.conversions,
                    c.remaining_budget
                );
            }
        }
    }
    out
}

pub fn render_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SCHEMA_LINE}\n{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.algorithm, r.initial_bid, opt(r.cpv_mean), r.bur_mean);
    }
    out
}

pub fn render_oracle_csv(report: &OracleReport) -> String {
    let mut out = format!("{SCHEMA_LINE}\n{ORACLE_HEADER}\n");
    for e in &report.evaluations {
        let _ = writeln!(out, "{},{},{},{}", e.bid, e.mean_bur, e.mean_spend, opt(e.mean_cpv));
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

pub fn emit_trace_csv(runs: &[AlgorithmRun], path: &Path) -> Result<(), HarnessError> {
    write_file(path, &render_trace_csv(runs))
}

pub fn emit_summary_csv(runs: &[AlgorithmRun], path: &Path) -> Result<(), HarnessError> {
    write_file(path, &render_summary_csv(runs))
}

pub fn emit_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    write_file(path, &render_sweep_csv(rows))
}

/// Human-readable summary table in the layout of the usual benchmark table.
pub fn format_summary_table(runs: &[AlgorithmRun]) -> String {
    let mut out = format!(
        "{:<14}{:>10}{:>14}{:>12}{:>10}\n",
        "Algorithm", "BUR (%)", "#Impressions", "CPV", "BV"
    );
    for run in runs {
        let s = &run.summary;
        let cpv = s.cpv.map(|c| format!("{:.5}", c.mean)).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<14}{:>10.2}{:>14.0}{:>12}{:>10.4}",
            run.algorithm.as_str(),
            s.bur.mean,
            s.impressions.mean,
            cpv,
            s.bv.mean
        );
    }
    out
}
