//! Master and worker processes over TCP with wall-clock budgets.

mod master;
pub mod wire;
mod worker;

pub use master::{run_master_service, DataMode, Master, MasterConfig};
pub use worker::{run_worker_process, WorkerExit, WorkerOptions};
