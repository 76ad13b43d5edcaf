//! Budgeted local SGD over a worker's shard.

use std::time::Duration;

use rand::Rng;

use crate::clock::StepClock;
use crate::error::{AtgError, Result};
use crate::problem::{sgd_step, DataSample, ParameterVector, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopRule {
    /// Step while the next step still finishes within `T` (and under the cap, if any).
    #[default]
    TimeOnly,
    /// Step exactly `iteration_cap` times regardless of time.
    IterationsOnly,
    /// Stop only once both the cap and `T` are used up.
    BothExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerBudget {
    /// `None` means unlimited.
    pub time: Option<Duration>,
    pub iteration_cap: Option<u64>,
    pub stop_rule: StopRule,
}

impl WorkerBudget {
    pub fn time_only(t: Duration) -> Self {
        Self {
            time: Some(t),
            iteration_cap: None,
            stop_rule: StopRule::TimeOnly,
        }
    }

    pub fn iterations(cap: u64) -> Self {
        Self {
            time: None,
            iteration_cap: Some(cap),
            stop_rule: StopRule::IterationsOnly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.time == Some(Duration::ZERO) {
            return Err(AtgError::invalid("time budget must be positive"));
        }
        let ok = match self.stop_rule {
            StopRule::TimeOnly => self.time.is_some() || self.iteration_cap.is_some(),
            StopRule::IterationsOnly => self.iteration_cap.is_some(),
            StopRule::BothExhausted => self.time.is_some() && self.iteration_cap.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(AtgError::invalid(format!(
                "budget {self:?} never terminates under its stop rule"
            )))
        }
    }

    fn permits<C: StepClock>(&self, q: u64, clock: &mut C) -> bool {
        let under_cap = self.iteration_cap.is_none_or(|cap| q < cap);
        match self.stop_rule {
            StopRule::IterationsOnly => under_cap,
            StopRule::TimeOnly => {
                under_cap && self.time.is_none_or(|t| clock.elapsed_after_next() <= t)
            }
            StopRule::BothExhausted => {
                under_cap || self.time.is_some_and(|t| clock.elapsed_after_next() <= t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputMode {
    #[default]
    LastIterate,
    /// Mean of the `q + 1` iterates `x_0, …, x_q`.
    RunningAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerConfig {
    pub schedule: StepSchedule,
    pub budget: WorkerBudget,
    pub output: OutputMode,
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.budget.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerReport {
    pub worker: usize,
    pub epoch: u64,
    /// The epoch output under `output_mode`.
    pub iterate: ParameterVector,
    /// The final SGD iterate, where idle updates resume.
    pub last_iterate: ParameterVector,
    pub q: u64,
    pub output_mode: OutputMode,
    /// Compute time from epoch start until the worker stopped stepping.
    pub finish_time: Duration,
    pub status: WorkerStatus,
}

fn check_shard(shard: &[&DataSample], x: &ParameterVector) -> Result<()> {
    let first = shard.first().ok_or(AtgError::EmptyShard)?;
    if first.dim() != x.len() {
        return Err(AtgError::DimensionMismatch {
            expected: first.dim(),
            actual: x.len(),
        });
    }
    if !x.is_finite() {
        return Err(AtgError::NonFinite("starting point"));
    }
    Ok(())
}

/// Runs one epoch of local SGD from `x0`. Each step draws a shard index
/// uniformly with replacement from `rng` and charges the clock.
pub fn run_worker_epoch<C: StepClock, R: Rng>(
    worker: usize,
    epoch: u64,
    shard: &[&DataSample],
    x0: &ParameterVector,
    config: &WorkerConfig,
    clock: &mut C,
    rng: &mut R,
) -> Result<WorkerReport> {
    check_shard(shard, x0)?;
    config.validate()?;

    let mut x = x0.as_slice().to_vec();
    let averaging = config.output == OutputMode::RunningAverage;
    let mut sum = if averaging { x.clone() } else { Vec::new() };
    let mut q = 0u64;
    let mut status = WorkerStatus::Completed;

    while config.budget.permits(q, clock) {
        clock.commit_step();
        let sample = shard[rng.random_range(0..shard.len())];
        sgd_step(&mut x, sample, config.schedule.rate_unchecked(q));
        q += 1;
        if !x.iter().all(|v| v.is_finite()) {
            status = WorkerStatus::Diverged;
            break;
        }
        if averaging {
            sum.iter_mut().zip(&x).for_each(|(s, v)| *s += v);
        }
    }

    let (iterate, last_iterate) = match status {
        WorkerStatus::Diverged => (x0.clone(), x0.clone()),
        WorkerStatus::Completed if averaging => {
            let k = (q + 1) as f64;
            sum.iter_mut().for_each(|s| *s /= k);
            (ParameterVector::from_raw(sum), ParameterVector::from_raw(x))
        }
        WorkerStatus::Completed => {
            let x = ParameterVector::from_raw(x);
            (x.clone(), x)
        }
    };
    if status == WorkerStatus::Diverged {
        log::warn!("worker {worker} diverged in epoch {epoch} after {q} steps");
    }
    Ok(WorkerReport {
        worker,
        epoch,
        iterate,
        last_iterate,
        q,
        output_mode: config.output,
        finish_time: clock.elapsed(),
        status,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdleOutcome {
    pub x_bar: ParameterVector,
    pub q_bar: u64,
    pub status: WorkerStatus,
}

/// Keeps stepping from the report's last iterate for `idle` time, continuing
/// the step index at `q`.
pub fn continue_idle_updates<C: StepClock, R: Rng>(
    report: &WorkerReport,
    schedule: &StepSchedule,
    shard: &[&DataSample],
    idle: Duration,
    clock: &mut C,
    rng: &mut R,
) -> Result<IdleOutcome> {
    check_shard(shard, &report.last_iterate)?;
    schedule.validate()?;
    if report.status == WorkerStatus::Diverged {
        return Ok(IdleOutcome {
            x_bar: report.last_iterate.clone(),
            q_bar: 0,
            status: WorkerStatus::Diverged,
        });
    }

    let mut x = report.last_iterate.as_slice().to_vec();
    let mut q_bar = 0u64;
    while clock.elapsed_after_next() <= idle {
        clock.commit_step();
        let sample = shard[rng.random_range(0..shard.len())];
        sgd_step(&mut x, sample, schedule.rate_unchecked(report.q + q_bar));
        q_bar += 1;
        if !x.iter().all(|v| v.is_finite()) {
            return Ok(IdleOutcome {
                x_bar: report.last_iterate.clone(),
                q_bar,
                status: WorkerStatus::Diverged,
            });
        }
    }
    Ok(IdleOutcome {
        x_bar: ParameterVector::from_raw(x),
        q_bar,
        status: WorkerStatus::Completed,
    })
}
