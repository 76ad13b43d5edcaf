//! Turns a config into plans, runs them and writes the outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::info;
use serde::Serialize;

use crate::bounds::{
    loglog_slope, monte_carlo_validate_with, MonteCarloConfig, MonteCarloReport, StartPoint,
};
use crate::combine::CombineRule;
use crate::data::{generate_synthetic, load_csv, read_cache, write_cache, CsvOptions, Dataset};
use crate::error::{AtgError, Result};
use crate::exec::Execution;
use crate::net::{DataMode, MasterConfig};
use crate::problem::{estimate_constants, StepSchedule};
use crate::sim::{simulate_run_with, EpochBudget, RunTrace, SimulationPlan};
use crate::worker::WorkerBudget;

use super::config::{DatasetSpec, ExperimentConfig, NetData, ScheduleSpec, Scheme, StartSpec};
use super::metrics::{rows_from_trace, write_metrics};

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSpec::Synthetic { m, d, noise_std } => {
            generate_synthetic(*m, *d, *noise_std, cfg.seed)
        }
        DatasetSpec::Csv {
            path,
            label_column,
            has_header,
            standardize,
        } => load_csv(
            path,
            &CsvOptions {
                label_column: *label_column,
                has_header: *has_header,
                standardize: *standardize,
            },
        ),
        DatasetSpec::Cache { path } => read_cache(path),
    }
}

pub fn build_schedule(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<StepSchedule> {
    let s = match cfg.plan.schedule {
        ScheduleSpec::Constant(r) => StepSchedule::Constant(r),
        ScheduleSpec::Decaying { radius } => {
            let x_ref = dataset.reference_optimum()?;
            StepSchedule::Decaying(estimate_constants(dataset.samples(), &x_ref, radius)?)
        }
    };
    s.validate()?;
    Ok(s)
}

fn worker_budget(cfg: &ExperimentConfig) -> WorkerBudget {
    WorkerBudget {
        time: cfg.plan.time_budget,
        iteration_cap: cfg.plan.iteration_cap,
        stop_rule: cfg.plan.stop_rule,
    }
}

/// Plan for one scheme. All schemes of a config share seed and latency, so
/// they see the same random draws.
pub fn build_plan(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    schedule: StepSchedule,
) -> Result<SimulationPlan> {
    let fixed = EpochBudget::Fixed(worker_budget(cfg));
    let (rule, budget, generalized) = match scheme {
        Scheme::Anytime | Scheme::Proportional => (CombineRule::Proportional, fixed, false),
        Scheme::Uniform => (CombineRule::Uniform, fixed, false),
        Scheme::Generalized => (CombineRule::Proportional, fixed, true),
        Scheme::SingleFastest => (CombineRule::SingleFastest, fixed, false),
        Scheme::Sync => (CombineRule::Uniform, EpochBudget::ShardPass, false),
        Scheme::Fnb(b) => (CombineRule::FastestK { b }, EpochBudget::ShardPass, false),
    };
    let plan = SimulationPlan {
        n_workers: cfg.plan.workers,
        redundancy: cfg.plan.redundancy,
        epochs: cfg.plan.epochs,
        budget,
        t_c: cfg.plan.waiting,
        rule,
        schedule,
        output: cfg.plan.output,
        latency: cfg.latency_models(),
        seed: cfg.seed,
        generalized,
        x0: None,
    };
    plan.validate()?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub trace: RunTrace,
    pub time_to_threshold: Option<Duration>,
}

#[derive(Debug, Clone, Serialize)]
struct SchemeSummary {
    scheme: String,
    epochs: usize,
    initial_error: f64,
    final_error: f64,
    virtual_time_s: f64,
    threshold: f64,
    time_to_threshold_s: Option<f64>,
}

pub fn run_schemes(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    exec: Execution,
) -> Result<Vec<SchemeOutcome>> {
    let schedule = build_schedule(cfg, dataset)?;
    cfg.schemes
        .iter()
        .map(|&scheme| {
            let plan = build_plan(cfg, scheme, schedule)?;
            let trace = simulate_run_with(&plan, dataset, exec)?;
            info!(
                "{scheme}: final error {:.4e} after {} epochs",
                trace.final_error(),
                trace.epochs.len()
            );
            Ok(SchemeOutcome {
                scheme,
                time_to_threshold: trace.time_to_threshold(cfg.threshold),
                trace,
            })
        })
        .collect()
}

/// File name of a scheme's metrics CSV.
pub fn metrics_file(scheme: Scheme) -> String {
    format!("{}.csv", scheme.to_string().replace(':', "-"))
}

/// Writes `manifest.txt`, one metrics CSV per scheme and `summary.json`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outcomes: &[SchemeOutcome]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.txt"), cfg.to_manifest())?;
    let mut summary = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let name = o.scheme.to_string();
        write_metrics(
            dir.join(metrics_file(o.scheme)),
            &rows_from_trace(&o.trace, &name),
        )?;
        summary.push(SchemeSummary {
            scheme: name,
            epochs: o.trace.epochs.len(),
            initial_error: o.trace.initial_error,
            final_error: o.trace.final_error(),
            virtual_time_s: o
                .trace
                .epochs
                .last()
                .map_or(0.0, |e| e.wall_clock.as_secs_f64()),
            threshold: cfg.threshold,
            time_to_threshold_s: o.time_to_threshold.map(|d| d.as_secs_f64()),
        });
    }
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

/// Loads the data, runs every scheme and writes outputs to `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<SchemeOutcome>> {
    let dataset = load_dataset(cfg)?;
    let outcomes = run_schemes(cfg, &dataset, exec)?;
    write_outputs(&cfg.output_dir, cfg, &outcomes)?;
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsOutcome {
    pub reports: Vec<MonteCarloReport>,
    /// Fitted exponent of the empirical variance against `Q`.
    pub variance_slope: f64,
    /// Fraction of all trials whose deviation exceeded the high-probability bound.
    pub tail_fraction: f64,
}

pub fn run_bounds(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    exec: Execution,
) -> Result<BoundsOutcome> {
    let b = &cfg.bounds;
    let start = match b.start {
        StartSpec::Optimum => StartPoint::Optimum,
        StartSpec::Zero => StartPoint::Zero,
        StartSpec::Offset(distance) => StartPoint::Offset { distance },
    };
    let reports =
        b.k.iter()
            .map(|&k| {
                let mc = MonteCarloConfig {
                    q: vec![k; b.workers],
                    trials: b.trials,
                    seed: cfg.seed,
                    radius: b.radius,
                    output: b.output,
                    start,
                    delta: b.delta,
                };
                let r = monte_carlo_validate_with(dataset, &mc, exec)?;
                info!(
                    "Q={}: variance {:.4e}, bound {:.4e}",
                    r.total_q, r.var_gap, r.variance_bound
                );
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
    let qs: Vec<f64> = reports.iter().map(|r| r.total_q as f64).collect();
    let vs: Vec<f64> = reports.iter().map(|r| r.var_gap).collect();
    let variance_slope = if reports.len() >= 2 {
        loglog_slope(&qs, &vs)?
    } else {
        f64::NAN
    };
    let total: f64 = reports.iter().map(|r| r.trials as f64).sum();
    let tail_fraction = reports
        .iter()
        .map(|r| r.tail_fraction * r.trials as f64)
        .sum::<f64>()
        / total;
    Ok(BoundsOutcome {
        reports,
        variance_slope,
        tail_fraction,
    })
}

/// Runs [`run_bounds`] and writes `bounds.json` plus the manifest.
pub fn run_bounds_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<BoundsOutcome> {
    let dataset = load_dataset(cfg)?;
    let out = run_bounds(cfg, &dataset, exec)?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("manifest.txt"), cfg.to_manifest())?;
    fs::write(
        cfg.output_dir.join("bounds.json"),
        serde_json::to_string_pretty(&out)?,
    )?;
    Ok(out)
}

/// Master settings for a networked run of the config's first scheme.
///
/// In shared mode the dataset is written as a cache under the output
/// directory and its path is sent to the workers.
pub fn master_config(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<MasterConfig> {
    let scheme = cfg.schemes[0];
    let rule = match scheme {
        Scheme::Anytime | Scheme::Proportional => CombineRule::Proportional,
        Scheme::Uniform => CombineRule::Uniform,
        Scheme::SingleFastest => CombineRule::SingleFastest,
        Scheme::Fnb(b) => CombineRule::FastestK { b },
        Scheme::Generalized | Scheme::Sync => {
            return Err(AtgError::config(
                "schemes",
                format!(
                    "{scheme} is simulation-only; use anytime, uniform, single-fastest or fnb:B"
                ),
            ))
        }
    };
    let t_c = cfg.plan.waiting.ok_or_else(|| {
        AtgError::config("plan.waiting_s", "networked runs need a finite deadline")
    })?;
    let data = match cfg.net.data {
        NetData::Inline => DataMode::Inline,
        NetData::Shared => {
            fs::create_dir_all(&cfg.output_dir)?;
            let path: PathBuf = cfg.output_dir.join("data.atg");
            write_cache(dataset, &path)?;
            DataMode::SharedFile(fs::canonicalize(path)?)
        }
    };
    Ok(MasterConfig {
        n_workers: cfg.plan.workers,
        redundancy: cfg.plan.redundancy,
        epochs: cfg.plan.epochs,
        budget: worker_budget(cfg),
        forced_caps: cfg.latency.forced_q.clone(),
        t_c,
        rule,
        schedule: build_schedule(cfg, dataset)?,
        output: cfg.plan.output,
        seed: cfg.seed,
        data,
        handshake_timeout: cfg.net.handshake,
        x0: None,
    })
}
