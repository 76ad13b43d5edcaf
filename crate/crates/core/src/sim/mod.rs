//! Virtual-time simulation of straggling workers and multi-epoch training.

mod compare;
mod latency;
mod plan;
mod run;

pub use compare::{compare_schemes, SchemeRun};
pub use latency::{sample_step_time, Dist, LatencyModel, Tail};
pub use plan::{EpochBudget, SimulationPlan};
pub use run::{simulate_run, simulate_run_with, EpochRecord, EpochResult, RunTrace};
