//! Built-in scenarios. Each takes the seed so runs can be repeated across seeds.

use std::time::Duration;

use crate::error::{AtgError, Result};
use crate::sim::{Dist, Tail};
use crate::worker::OutputMode;

use super::config::{DatasetSpec, ExperimentConfig, ScheduleSpec, Scheme, StartSpec};

pub const PRESETS: &[&str] = &[
    "fixed-profile",
    "vs-sync",
    "vs-fnb",
    "generalized",
    "ordering",
    "bounds",
];

/// Per-worker step counts of the fixed-profile comparison.
pub const PROFILE: [u64; 10] = [10_000, 8500, 8000, 7500, 7250, 6800, 5500, 2000, 1500, 500];

/// Epoch budget of the fixed-profile comparison. Divisible by every entry of
/// [`PROFILE`], so each worker does exactly its count.
pub const PROFILE_BUDGET: Duration = Duration::from_nanos(650_760_000);

fn base(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed,
        dataset: DatasetSpec::Synthetic {
            m: 10_000,
            d: 100,
            noise_std: 1e-3f64.sqrt(),
        },
        ..ExperimentConfig::default()
    };
    c.plan.workers = 10;
    c.plan.redundancy = 0;
    c.plan.waiting = None;
    c
}

/// Heterogeneous cluster: worker `v` is `1 + v/9` times slower than worker 0.
fn straggling(seed: u64) -> ExperimentConfig {
    let mut c = base(seed);
    c.latency.slowdown_spread = 1.0;
    c.latency.tail = Some(Tail::default());
    c.plan.schedule = ScheduleSpec::Constant(1.4e-4);
    c.plan.time_budget = Some(Duration::from_secs(4));
    c.plan.epochs = 40;
    c.threshold = 0.01;
    c
}

pub fn preset(name: &str, seed: u64) -> Result<ExperimentConfig> {
    let mut c = match name {
        "fixed-profile" => {
            let mut c = base(seed);
            c.plan.epochs = 10;
            c.plan.time_budget = Some(PROFILE_BUDGET);
            c.plan.schedule = ScheduleSpec::Constant(1.6e-5);
            c.latency.comm = Dist::Constant(Duration::from_millis(10));
            c.latency.forced_q = Some(PROFILE.to_vec());
            c.schemes = vec![Scheme::Proportional, Scheme::Uniform];
            c
        }
        "vs-sync" => {
            let mut c = straggling(seed);
            c.schemes = vec![Scheme::Anytime, Scheme::Sync];
            c
        }
        "vs-fnb" => {
            let mut c = straggling(seed);
            c.plan.redundancy = 2;
            c.threshold = 10f64.powf(-0.4);
            c.schemes = vec![Scheme::Anytime, Scheme::Fnb(8)];
            c
        }
        "generalized" => {
            let mut c = base(seed);
            c.plan.epochs = 10;
            c.plan.time_budget = Some(Duration::from_secs(1));
            c.plan.schedule = ScheduleSpec::Constant(1e-4);
            c.latency.slowdown_spread = 1.0;
            c.latency.comm = Dist::ShiftedExponential {
                shift: 0.3,
                rate: 5.0,
            };
            c.schemes = vec![Scheme::Generalized, Scheme::Anytime];
            c
        }
        "ordering" => {
            let mut c = straggling(seed);
            c.plan.redundancy = 1;
            c.latency.persistent = vec![9];
            c.schemes = vec![Scheme::Anytime, Scheme::Fnb(2), Scheme::Sync];
            c
        }
        "bounds" => {
            let mut c = base(seed);
            c.dataset = DatasetSpec::Synthetic {
                m: 200,
                d: 10,
                noise_std: 1.0,
            };
            c.bounds.workers = 2;
            c.bounds.k = vec![100, 200, 500, 1000, 2000, 5000, 10_000];
            c.bounds.trials = 200;
            c.bounds.radius = 1.0;
            c.bounds.output = OutputMode::LastIterate;
            c.bounds.start = StartSpec::Optimum;
            c.bounds.delta = 0.1;
            c
        }
        _ => {
            return Err(AtgError::invalid(format!(
                "unknown preset {name:?}; choose one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    c.output_dir = format!("out/{name}-seed{seed}").into();
    c.validate()?;
    Ok(c)
}
