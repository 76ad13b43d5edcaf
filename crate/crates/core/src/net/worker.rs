use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use crate::clock::WallClock;
use crate::data::read_cache;
use crate::error::{AtgError, Result};
use crate::problem::{DataSample, ParameterVector};
use crate::rng::{Purpose, StreamFactory};
use crate::worker::{run_worker_epoch, WorkerBudget, WorkerConfig};

use super::wire::{read_message, write_message, Assign, DataSource, Message, Update};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerOptions {
    /// Keep retrying the connection this long.
    pub connect_timeout: Duration,
    /// Drop the connection after this many epochs (fault injection).
    pub exit_after_epochs: Option<u64>,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(10),
            exit_after_epochs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerExit {
    Stopped { epochs: u64 },
    FaultInjected { epochs: u64 },
}

fn connect(addr: impl ToSocketAddrs + Copy, timeout: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(e.into()),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

fn load_shard(a: &Assign) -> Result<Vec<DataSample>> {
    match &a.data {
        DataSource::Inline { dim, rows } => {
            let width = *dim as usize + 1;
            if *dim == 0 || rows.is_empty() || rows.len() % width != 0 {
                return Err(AtgError::invalid(
                    "inline shard rows do not match the row width",
                ));
            }
            rows.chunks_exact(width)
                .map(|r| DataSample::new(r[..width - 1].to_vec(), r[width - 1]))
                .collect()
        }
        DataSource::SharedFile(path) => {
            let dataset = read_cache(path)?;
            let blocks = dataset.blocks(a.n_workers as usize)?;
            a.blocks
                .iter()
                .map(|&b| {
                    blocks
                        .get(b as usize)
                        .map(|blk| dataset.samples()[blk.range.clone()].to_vec())
                        .ok_or(AtgError::InvalidWorker {
                            index: b as usize,
                            workers: blocks.len(),
                        })
                })
                .collect::<Result<Vec<_>>>()
                .map(|v| v.concat())
        }
    }
}

/// Connects to a master, trains on assigned blocks until STOP, and reports
/// each epoch's iterate.
pub fn run_worker_process(
    addr: impl ToSocketAddrs + Copy,
    opts: WorkerOptions,
) -> Result<WorkerExit> {
    let mut stream = connect(addr, opts.connect_timeout)?;
    stream.set_nodelay(true)?;
    let assign = match read_message(&mut stream)? {
        Message::Assign(a) => a,
        other => {
            return Err(AtgError::Protocol {
                offset: 0,
                message: format!("expected ASSIGN, got {other:?}"),
            })
        }
    };
    let shard = load_shard(&assign)?;
    let shard_refs: Vec<&DataSample> = shard.iter().collect();
    let config = WorkerConfig {
        schedule: assign.schedule,
        budget: WorkerBudget {
            time: assign.time_budget,
            iteration_cap: assign.iteration_cap,
            stop_rule: assign.stop_rule,
        },
        output: assign.output,
    };
    config.validate()?;
    let v = assign.worker as usize;
    let streams = StreamFactory::new(assign.seed);
    log::info!("worker {v}: {} samples in shard", shard.len());
    write_message(&mut stream, &Message::Ack { epoch: 0 })?;

    let mut done = 0u64;
    loop {
        match read_message(&mut stream)? {
            Message::StartEpoch { epoch, x } => {
                let x0 = ParameterVector::new(x)?;
                let mut clock = WallClock::start();
                let mut rng = streams.stream(Purpose::SampleIndex, v as u64, epoch as u64);
                let r = run_worker_epoch(
                    v,
                    epoch as u64,
                    &shard_refs,
                    &x0,
                    &config,
                    &mut clock,
                    &mut rng,
                )?;
                let update = Update {
                    worker: assign.worker,
                    q: r.q,
                    status: r.status,
                    finish: r.finish_time,
                    x: r.iterate.into_inner(),
                };
                write_message(&mut stream, &Message::Update { epoch, update })?;
                done += 1;
                if opts.exit_after_epochs == Some(done) {
                    log::warn!("worker {v}: exiting after {done} epochs as requested");
                    return Ok(WorkerExit::FaultInjected { epochs: done });
                }
            }
            Message::Stop { .. } => return Ok(WorkerExit::Stopped { epochs: done }),
            other => log::warn!("worker {v}: ignoring {other:?}"),
        }
    }
}
