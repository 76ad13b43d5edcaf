use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use atg_core::exec::Execution;
use atg_core::experiment::config::ExperimentConfig;
use atg_core::experiment::presets::PRESETS;
use atg_core::experiment::{
    load_dataset, master_config, preset, rows_from_trace, run_bounds_experiment, run_experiment,
    write_metrics,
};
use atg_core::net::{run_worker_process, Master, WorkerExit, WorkerOptions};

#[derive(Parser)]
#[command(
    name = "atg",
    version,
    about = "Fixed-time distributed SGD experiments"
)]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate every scheme of a config file.
    Run {
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in scenario, or print its config with --print.
    Preset {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        print: bool,
    },
    /// List built-in scenarios.
    Presets,
    /// Monte Carlo check of the error bounds.
    ValidateBounds {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coordinate TCP workers for the first scheme of a config.
    Master {
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Join a master and train until it stops.
    Worker {
        #[arg(long)]
        connect: String,
        #[arg(long, default_value_t = 10.0)]
        connect_timeout_s: f64,
        /// Drop the connection after this many epochs.
        #[arg(long)]
        exit_after: Option<u64>,
    },
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg =
        ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn simulate(cfg: &ExperimentConfig, exec: Execution) -> Result<()> {
    for o in run_experiment(cfg, exec)? {
        let t = o.time_to_threshold.map_or_else(
            || "not reached".into(),
            |d| format!("{:.3} s", d.as_secs_f64()),
        );
        println!(
            "{:<16} final error {:.4e}  time to {:.3e}: {t}",
            o.scheme.to_string(),
            o.trace.final_error(),
            cfg.threshold
        );
    }
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ATG_LOG_LEVEL", "info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };

    match cli.cmd {
        Cmd::Run { config, out } => simulate(&load(&config, out)?, exec),
        Cmd::Preset {
            name,
            seed,
            out,
            print,
        } => {
            let mut cfg = preset(&name, seed)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if print {
                print!("{}", cfg.to_manifest());
                return Ok(());
            }
            if name == "bounds" {
                report_bounds(&cfg, exec)
            } else {
                simulate(&cfg, exec)
            }
        }
        Cmd::Presets => {
            PRESETS.iter().for_each(|p| println!("{p}"));
            Ok(())
        }
        Cmd::ValidateBounds { config, out } => report_bounds(&load(&config, out)?, exec),
        Cmd::Master { config, bind, out } => {
            let cfg = load(&config, out)?;
            let dataset = load_dataset(&cfg)?;
            let mc = master_config(&cfg, &dataset)?;
            let master = Master::bind(&bind)?;
            info!(
                "listening on {} for {} workers",
                master.local_addr()?,
                mc.n_workers
            );
            let trace = master.run(&mc, &dataset)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            std::fs::write(cfg.output_dir.join("manifest.txt"), cfg.to_manifest())?;
            let name = format!("net-{}", cfg.schemes[0]);
            let file = cfg
                .output_dir
                .join(format!("{}.csv", name.replace(':', "-")));
            write_metrics(&file, &rows_from_trace(&trace, &name))?;
            println!(
                "final error {:.4e} after {} epochs; metrics in {}",
                trace.final_error(),
                trace.epochs.len(),
                file.display()
            );
            Ok(())
        }
        Cmd::Worker {
            connect,
            connect_timeout_s,
            exit_after,
        } => {
            if !(connect_timeout_s.is_finite() && connect_timeout_s > 0.0) {
                bail!("--connect-timeout-s must be positive");
            }
            let opts = WorkerOptions {
                connect_timeout: Duration::from_secs_f64(connect_timeout_s),
                exit_after_epochs: exit_after,
            };
            let addr = std::net::ToSocketAddrs::to_socket_addrs(&connect)?
                .next()
                .with_context(|| format!("cannot resolve {connect}"))?;
            match run_worker_process(addr, opts)? {
                WorkerExit::Stopped { epochs } => info!("stopped after {epochs} epochs"),
                WorkerExit::FaultInjected { epochs } => info!("left after {epochs} epochs"),
            }
            Ok(())
        }
    }
}

fn report_bounds(cfg: &ExperimentConfig, exec: Execution) -> Result<()> {
    let out = run_bounds_experiment(cfg, exec)?;
    println!(
        "{:>8} {:>12} {:>12} {:>12} {:>12} {:>8}",
        "Q", "mean gap", "var gap", "var bound", "mean bound", "tail"
    );
    for r in &out.reports {
        println!(
            "{:>8} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.4}",
            r.total_q,
            r.mean_gap,
            r.var_gap,
            r.variance_bound,
            r.expected_distance_bound,
            r.tail_fraction
        );
    }
    println!(
        "variance slope {:.3}, tail fraction {:.4}; details in {}",
        out.variance_slope,
        out.tail_fraction,
        cfg.output_dir.join("bounds.json").display()
    );
    Ok(())
}
