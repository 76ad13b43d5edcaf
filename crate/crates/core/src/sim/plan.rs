use std::time::Duration;

use crate::combine::CombineRule;
use crate::error::{AtgError, Result};
use crate::problem::{ParameterVector, StepSchedule};
use crate::worker::{OutputMode, StopRule, WorkerBudget};

use super::latency::LatencyModel;

/// How much work each worker does per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpochBudget {
    Fixed(WorkerBudget),
    /// One pass over the worker's own shard, as many steps as it holds samples.
    ShardPass,
}

impl EpochBudget {
    pub(crate) fn for_shard(&self, shard_len: usize) -> WorkerBudget {
        match *self {
            EpochBudget::Fixed(b) => b,
            EpochBudget::ShardPass => WorkerBudget::iterations(shard_len as u64),
        }
    }

    /// Point after epoch start at which the master starts listening.
    pub(crate) fn listen_offset(&self) -> Duration {
        match *self {
            EpochBudget::Fixed(WorkerBudget {
                time: Some(t),
                stop_rule: StopRule::TimeOnly | StopRule::BothExhausted,
                ..
            }) => t,
            _ => Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub n_workers: usize,
    pub redundancy: usize,
    pub epochs: u64,
    pub budget: EpochBudget,
    /// Waiting deadline after the master starts listening; `None` waits for
    /// every responsive worker.
    pub t_c: Option<Duration>,
    pub rule: CombineRule,
    pub schedule: StepSchedule,
    pub output: OutputMode,
    /// One model per worker.
    pub latency: Vec<LatencyModel>,
    pub seed: u64,
    /// Workers keep stepping while the master waits and blend on restart.
    pub generalized: bool,
    /// Starting point; zeros when absent.
    pub x0: Option<ParameterVector>,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_workers == 0 {
            return Err(AtgError::invalid("plan needs at least one worker"));
        }
        if self.redundancy >= self.n_workers {
            return Err(AtgError::InvalidRedundancy {
                workers: self.n_workers,
                redundancy: self.redundancy,
            });
        }
        if self.epochs == 0 {
            return Err(AtgError::invalid("plan needs at least one epoch"));
        }
        if self.latency.len() != self.n_workers {
            return Err(AtgError::DimensionMismatch {
                expected: self.n_workers,
                actual: self.latency.len(),
            });
        }
        if self.t_c == Some(Duration::ZERO) {
            return Err(AtgError::invalid("T_c must be positive or unlimited"));
        }
        if let EpochBudget::Fixed(b) = &self.budget {
            b.validate()?;
        }
        self.rule.validate(self.n_workers)?;
        self.schedule.validate()?;
        for m in &self.latency {
            m.validate()?;
        }
        if let Some(x) = &self.x0 {
            if !x.is_finite() {
                return Err(AtgError::NonFinite("x0"));
            }
        }
        Ok(())
    }
}
