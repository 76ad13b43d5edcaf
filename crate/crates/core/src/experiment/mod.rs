//! Config files, built-in scenarios and the output files of a run.

pub mod config;
pub mod metrics;
pub mod presets;
pub mod runner;

pub use config::{ExperimentConfig, Scheme};
pub use metrics::{read_metrics, rows_from_trace, write_metrics, MetricRow};
pub use presets::preset;
pub use runner::{
    build_plan, load_dataset, master_config, run_bounds, run_bounds_experiment, run_experiment,
    run_schemes, write_outputs, BoundsOutcome, SchemeOutcome,
};
