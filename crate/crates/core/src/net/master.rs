use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use crate::combine::{fuse_selected, CombineRule};
use crate::data::{build_assignment, worker_shard, Dataset};
use crate::error::{AtgError, Result};
use crate::problem::{normalized_error, ParameterVector, StepSchedule};
use crate::sim::{EpochRecord, EpochResult, RunTrace};
use crate::worker::{OutputMode, StopRule, WorkerBudget, WorkerReport, WorkerStatus};

use super::wire::{read_message, write_message, Assign, DataSource, Message, Update};

#[derive(Debug, Clone, PartialEq)]
pub enum DataMode {
    /// Workers load this ATG1 cache file themselves.
    SharedFile(PathBuf),
    /// Shards travel inside the ASSIGN message.
    Inline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterConfig {
    pub n_workers: usize,
    pub redundancy: usize,
    pub epochs: u64,
    /// Wall-clock budget for each worker epoch.
    pub budget: WorkerBudget,
    /// Per-worker iteration caps replacing `budget.iteration_cap`.
    pub forced_caps: Option<Vec<u64>>,
    /// Waiting deadline, counted from the end of the broadcast plus the
    /// listen offset (`T` for time budgets).
    pub t_c: Duration,
    pub rule: CombineRule,
    pub schedule: StepSchedule,
    pub output: OutputMode,
    pub seed: u64,
    pub data: DataMode,
    pub handshake_timeout: Duration,
    pub x0: Option<ParameterVector>,
}

impl MasterConfig {
    fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.n_workers == 0 || self.epochs == 0 {
            return Err(AtgError::invalid("net run needs workers and epochs"));
        }
        if self.t_c.is_zero() {
            return Err(AtgError::invalid("net runs need a positive T_c"));
        }
        if let Some(c) = &self.forced_caps {
            if c.len() != self.n_workers {
                return Err(AtgError::DimensionMismatch {
                    expected: self.n_workers,
                    actual: c.len(),
                });
            }
        }
        if let Some(x) = &self.x0 {
            if x.len() != dataset.dim() {
                return Err(AtgError::DimensionMismatch {
                    expected: dataset.dim(),
                    actual: x.len(),
                });
            }
        }
        self.budget.validate()?;
        self.schedule.validate()?;
        self.rule.validate(self.n_workers)
    }

    fn listen_offset(&self) -> Duration {
        match self.budget {
            WorkerBudget {
                time: Some(t),
                stop_rule: StopRule::TimeOnly | StopRule::BothExhausted,
                ..
            } if self.forced_caps.is_none() => t,
            _ => Duration::ZERO,
        }
    }
}

enum Event {
    Update {
        worker: usize,
        epoch: u32,
        update: Update,
        at: Instant,
    },
    Lost(usize),
}

pub struct Master {
    listener: TcpListener,
}

impl Master {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts `N` workers, runs all epochs against wall-clock time and
    /// returns the trace. Errors are computed against the dataset's optimum.
    pub fn run(self, cfg: &MasterConfig, dataset: &Dataset) -> Result<RunTrace> {
        cfg.validate(dataset)?;
        let n = cfg.n_workers;
        let table = build_assignment(n, cfg.redundancy)?;
        let x_star = dataset.reference_optimum()?;
        let mut x = cfg
            .x0
            .clone()
            .unwrap_or_else(|| ParameterVector::zeros(dataset.dim()));
        let initial_error = normalized_error(dataset.samples(), &x, &x_star)?;

        let mut streams = self.handshake(cfg, dataset, &table)?;
        let (tx, rx) = mpsc::channel();
        for (v, s) in streams.iter().enumerate() {
            spawn_reader(v, s.try_clone()?, tx.clone());
        }
        drop(tx);

        let mut alive = vec![true; n];
        let listen = cfg.listen_offset();
        let mut wall_clock = Duration::ZERO;
        let mut epochs = Vec::with_capacity(cfg.epochs as usize);
        for t in 0..cfg.epochs {
            let epoch = u32::try_from(t).map_err(|_| AtgError::invalid("too many epochs"))?;
            let start = Instant::now();
            let msg = Message::StartEpoch {
                epoch,
                x: x.as_slice().to_vec(),
            };
            for (v, s) in streams.iter_mut().enumerate() {
                if alive[v] && write_message(s, &msg).is_err() {
                    log::warn!("worker {v} unreachable at epoch {t}");
                    alive[v] = false;
                }
            }
            let listen_at = Instant::now() + listen;
            let deadline = listen_at + cfg.t_c;
            let arrived = collect_updates(&rx, epoch, &mut alive, deadline, cfg.rule, n);
            if alive.iter().all(|a| !a) {
                return Err(AtgError::AllWorkersLost { epoch: t });
            }

            let mut q = vec![0u64; n];
            let mut reports = Vec::new();
            for (&v, (u, at)) in &arrived {
                q[v] = u.q;
                if u.status != WorkerStatus::Completed || u.x.len() != dataset.dim() {
                    continue;
                }
                let Ok(iterate) = ParameterVector::new(u.x.clone()) else {
                    continue;
                };
                reports.push((
                    *at,
                    WorkerReport {
                        worker: v,
                        epoch: t,
                        last_iterate: iterate.clone(),
                        iterate,
                        q: u.q,
                        output_mode: cfg.output,
                        finish_time: at.saturating_duration_since(listen_at - listen),
                        status: u.status,
                    },
                ));
            }
            if let CombineRule::FastestK { b } = cfg.rule {
                reports.sort_by_key(|(at, r)| (*at, r.worker));
                reports.truncate(n - b);
            }
            let mut reports: Vec<WorkerReport> = reports.into_iter().map(|(_, r)| r).collect();
            reports.sort_by_key(|r| r.worker);

            let received: Vec<usize> = reports.iter().map(|r| r.worker).collect();
            let failed = reports.is_empty();
            let (weights, total_q) = if failed {
                log::warn!("epoch {t}: no update arrived within the deadline");
                (vec![0.0; n], 0)
            } else {
                let fusion = fuse_selected(&reports, cfg.rule, n)?;
                x = fusion.x;
                (fusion.weights, fusion.total_q)
            };
            let duration = start.elapsed();
            wall_clock += duration;
            let error = normalized_error(dataset.samples(), &x, &x_star)?;
            log::info!(
                "epoch {t}: {} received, Q={total_q}, error={error:.3e}",
                received.len()
            );
            epochs.push(EpochRecord {
                result: EpochResult {
                    epoch: t,
                    x: x.clone(),
                    received,
                    weights,
                    total_q,
                    failed,
                },
                q,
                duration,
                wall_clock,
                error,
            });
        }

        let stop = Message::Stop {
            epoch: cfg.epochs as u32,
        };
        for (v, s) in streams.iter_mut().enumerate() {
            if alive[v] {
                let _ = write_message(s, &stop);
            }
        }
        Ok(RunTrace {
            initial_error,
            epochs,
        })
    }

    fn handshake(
        &self,
        cfg: &MasterConfig,
        dataset: &Dataset,
        table: &crate::data::AssignmentTable,
    ) -> Result<Vec<TcpStream>> {
        let deadline = Instant::now() + cfg.handshake_timeout;
        self.listener.set_nonblocking(true)?;
        let mut streams = Vec::with_capacity(cfg.n_workers);
        while streams.len() < cfg.n_workers {
            match self.listener.accept() {
                Ok((s, peer)) => {
                    log::info!("worker {} connected from {peer}", streams.len());
                    s.set_nonblocking(false)?;
                    s.set_nodelay(true)?;
                    streams.push(s);
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(AtgError::invalid(format!(
                            "handshake timed out with {} of {} workers",
                            streams.len(),
                            cfg.n_workers
                        )));
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }

        for (v, s) in streams.iter_mut().enumerate() {
            let data = match &cfg.data {
                DataMode::SharedFile(p) => DataSource::SharedFile(p.to_string_lossy().into_owned()),
                DataMode::Inline => {
                    let shard = worker_shard(dataset, table, v)?;
                    let rows = shard
                        .iter()
                        .flat_map(|s| s.features.iter().copied().chain([s.label]))
                        .collect();
                    DataSource::Inline {
                        dim: dataset.dim() as u32,
                        rows,
                    }
                }
            };
            let mut budget = cfg.budget;
            if let Some(caps) = &cfg.forced_caps {
                budget = WorkerBudget::iterations(caps[v]);
            }
            let assign = Assign {
                worker: v as u32,
                n_workers: cfg.n_workers as u32,
                redundancy: cfg.redundancy as u32,
                seed: cfg.seed,
                stop_rule: budget.stop_rule,
                time_budget: budget.time,
                iteration_cap: budget.iteration_cap,
                schedule: cfg.schedule,
                output: cfg.output,
                blocks: table.blocks_of(v).into_iter().map(|b| b as u32).collect(),
                data,
            };
            write_message(s, &Message::Assign(Box::new(assign)))?;
            let left = deadline.saturating_duration_since(Instant::now());
            s.set_read_timeout(Some(left.max(Duration::from_millis(1))))?;
            match read_message(s)? {
                Message::Ack { .. } => {}
                other => {
                    return Err(AtgError::Protocol {
                        offset: 0,
                        message: format!("expected ACK from worker {v}, got {other:?}"),
                    })
                }
            }
            s.set_read_timeout(None)?;
        }
        Ok(streams)
    }
}

fn spawn_reader(worker: usize, mut stream: TcpStream, tx: Sender<Event>) {
    thread::spawn(move || loop {
        match read_message(&mut stream) {
            Ok(Message::Update { epoch, update }) => {
                let at = Instant::now();
                if update.worker as usize != worker {
                    log::warn!("worker {worker} sent an update labelled {}", update.worker);
                }
                if tx
                    .send(Event::Update {
                        worker,
                        epoch,
                        update,
                        at,
                    })
                    .is_err()
                {
                    return;
                }
            }
            Ok(other) => log::warn!("ignoring unexpected {other:?} from worker {worker}"),
            Err(e) => {
                log::debug!("worker {worker} connection closed: {e}");
                let _ = tx.send(Event::Lost(worker));
                return;
            }
        }
    });
}

fn collect_updates(
    rx: &Receiver<Event>,
    epoch: u32,
    alive: &mut [bool],
    deadline: Instant,
    rule: CombineRule,
    n: usize,
) -> BTreeMap<usize, (Update, Instant)> {
    let enough = match rule {
        CombineRule::FastestK { b } => n - b,
        _ => n,
    };
    let mut got = BTreeMap::new();
    loop {
        let waiting = (0..n)
            .filter(|&v| alive[v] && !got.contains_key(&v))
            .count();
        if waiting == 0 || got.len() >= enough {
            break;
        }
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            break;
        }
        match rx.recv_timeout(left) {
            Ok(Event::Update {
                worker,
                epoch: e,
                update,
                at,
            }) if e == epoch && alive[worker] && at <= deadline => {
                got.insert(worker, (update, at));
            }
            Ok(Event::Update {
                worker, epoch: e, ..
            }) => {
                log::debug!("dropping late update from worker {worker} for epoch {e}");
            }
            Ok(Event::Lost(v)) => {
                log::warn!("worker {v} disconnected; treating it as a persistent straggler");
                alive[v] = false;
            }
            Err(RecvTimeoutError::Timeout) => break,
            Err(RecvTimeoutError::Disconnected) => {
                alive.iter_mut().for_each(|a| *a = false);
                break;
            }
        }
    }
    got
}

pub fn run_master_service(
    addr: impl ToSocketAddrs,
    cfg: &MasterConfig,
    dataset: &Dataset,
) -> Result<RunTrace> {
    Master::bind(addr)?.run(cfg, dataset)
}
