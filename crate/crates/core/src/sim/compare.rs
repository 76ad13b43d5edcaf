use std::time::Duration;

use crate::data::Dataset;
use crate::error::{AtgError, Result};
use crate::exec::Execution;

use super::plan::SimulationPlan;
use super::run::{simulate_run_with, RunTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRun {
    pub name: String,
    pub trace: RunTrace,
    pub time_to_threshold: Option<Duration>,
}

/// Runs each named plan on the same dataset. Plans must share the seed,
/// worker count and latency models so every scheme sees the same draws.
pub fn compare_schemes(
    plans: &[(String, SimulationPlan)],
    dataset: &Dataset,
    threshold: f64,
) -> Result<Vec<SchemeRun>> {
    let Some((_, first)) = plans.first() else {
        return Ok(Vec::new());
    };
    for (name, p) in plans {
        if p.seed != first.seed || p.n_workers != first.n_workers || p.latency != first.latency {
            return Err(AtgError::SchemeMismatch(format!(
                "plan {name:?} differs from the first plan in seed, workers or latency"
            )));
        }
    }
    // Parallelism goes to the workers inside each run.
    plans
        .iter()
        .map(|(name, p)| {
            let trace = simulate_run_with(p, dataset, Execution::default())?;
            Ok(SchemeRun {
                name: name.clone(),
                time_to_threshold: trace.time_to_threshold(threshold),
                trace,
            })
        })
        .collect()
}
