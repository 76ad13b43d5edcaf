use std::time::Duration;

use crate::clock::VirtualClock;
use crate::combine::{
    apply_waiting_deadline, fuse_selected, generalized_blend, Arrival, CombineRule,
};
use crate::data::{build_assignment, worker_shard, Dataset};
use crate::error::{AtgError, Result};
use crate::exec::Execution;
use crate::problem::{normalized_error, DataSample, ParameterVector};
use crate::rng::{Purpose, StreamFactory};
use crate::worker::{
    continue_idle_updates, run_worker_epoch, WorkerConfig, WorkerReport, WorkerStatus,
};

use super::plan::SimulationPlan;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochResult {
    pub epoch: u64,
    pub x: ParameterVector,
    /// Workers whose updates were fused, ascending.
    pub received: Vec<usize>,
    /// One weight per worker; zero outside `received`.
    pub weights: Vec<f64>,
    /// Steps summed over `received`.
    pub total_q: u64,
    /// Nothing arrived in time; `x` is the previous iterate.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub result: EpochResult,
    /// Steps per worker this epoch, zero for persistent stragglers.
    pub q: Vec<u64>,
    pub duration: Duration,
    /// Cumulative virtual time at the end of this epoch.
    pub wall_clock: Duration,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub initial_error: f64,
    pub epochs: Vec<EpochRecord>,
}

impl RunTrace {
    pub fn final_x(&self) -> Option<&ParameterVector> {
        self.epochs.last().map(|e| &e.result.x)
    }

    pub fn final_error(&self) -> f64 {
        self.epochs.last().map_or(self.initial_error, |e| e.error)
    }

    /// Virtual time of the first epoch whose error is at most `threshold`.
    pub fn time_to_threshold(&self, threshold: f64) -> Option<Duration> {
        if self.initial_error <= threshold {
            return Some(Duration::ZERO);
        }
        self.epochs
            .iter()
            .find(|e| e.error <= threshold)
            .map(|e| e.wall_clock)
    }
}

struct Returned {
    report: WorkerReport,
    comm: Duration,
    factor: f64,
}

pub fn simulate_run(plan: &SimulationPlan, dataset: &Dataset) -> Result<RunTrace> {
    simulate_run_with(plan, dataset, Execution::default())
}

/// Runs the plan against virtual time. The result depends only on the plan
/// and dataset; `exec` affects speed, not numbers.
pub fn simulate_run_with(
    plan: &SimulationPlan,
    dataset: &Dataset,
    exec: Execution,
) -> Result<RunTrace> {
    plan.validate()?;
    let n = plan.n_workers;
    let table = build_assignment(n, plan.redundancy)?;
    let shards = (0..n)
        .map(|v| worker_shard(dataset, &table, v))
        .collect::<Result<Vec<Vec<&DataSample>>>>()?;
    let configs: Vec<WorkerConfig> = shards
        .iter()
        .map(|s| WorkerConfig {
            schedule: plan.schedule,
            budget: plan.budget.for_shard(s.len()),
            output: plan.output,
        })
        .collect();
    let x_star = dataset.reference_optimum()?;
    let mut x = match &plan.x0 {
        Some(x0) if x0.len() != dataset.dim() => {
            return Err(AtgError::DimensionMismatch {
                expected: dataset.dim(),
                actual: x0.len(),
            })
        }
        Some(x0) => x0.clone(),
        None => ParameterVector::zeros(dataset.dim()),
    };
    let initial_error = normalized_error(dataset.samples(), &x, &x_star)?;
    let streams = StreamFactory::new(plan.seed);
    let listen = plan.budget.listen_offset();

    let mut starts = vec![x.clone(); n];
    let mut wall_clock = Duration::ZERO;
    let mut epochs = Vec::with_capacity(plan.epochs as usize);

    for t in 0..plan.epochs {
        let outcomes = exec.map(n, |v| -> Result<Option<Returned>> {
            let model = &plan.latency[v];
            if model.persistent {
                return Ok(None);
            }
            let (w, e) = (v as u64, t);
            let factor = model.epoch_factor(&mut streams.stream(Purpose::EpochTail, w, e));
            let mut cost_rng = streams.stream(Purpose::StepCost, w, e);
            let mut clock =
                VirtualClock::new(|| model.compute.sample_duration(&mut cost_rng, factor));
            let mut rng = streams.stream(Purpose::SampleIndex, w, e);
            let report = run_worker_epoch(
                v,
                t,
                &shards[v],
                &starts[v],
                &configs[v],
                &mut clock,
                &mut rng,
            )?;
            let comm = model
                .comm
                .sample_duration(&mut streams.stream(Purpose::CommDelay, w, e), 1.0);
            Ok(Some(Returned {
                report,
                comm,
                factor,
            }))
        });
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

        let arrivals: Vec<Arrival> = outcomes
            .iter()
            .enumerate()
            .map(|(v, o)| Arrival {
                worker: v,
                wait: o
                    .as_ref()
                    .filter(|r| r.report.status == WorkerStatus::Completed)
                    .map(|r| r.report.finish_time.saturating_sub(listen) + r.comm),
            })
            .collect();
        let wait_of = |v: usize| arrivals[v].wait.expect("received workers arrived");
        let mut received = apply_waiting_deadline(&arrivals, plan.t_c);
        if let CombineRule::FastestK { b } = plan.rule {
            received.sort_by_key(|&v| (wait_of(v), v));
            received.truncate(n - b);
        }
        let wait = if received.is_empty() {
            plan.t_c
        } else if matches!(plan.rule, CombineRule::FastestK { .. }) || received.len() == n {
            received.iter().map(|&v| wait_of(v)).max()
        } else {
            plan.t_c
                .or_else(|| received.iter().map(|&v| wait_of(v)).max())
        };
        let all_lost = plan.latency.iter().all(|m| m.persistent);
        let wait = match wait {
            Some(w) if !all_lost => w,
            _ => return Err(AtgError::AllWorkersLost { epoch: t }),
        };
        received.sort_unstable();

        let q: Vec<u64> = outcomes
            .iter()
            .map(|o| o.as_ref().map_or(0, |r| r.report.q))
            .collect();
        let failed = received.is_empty();
        let (weights, total_q) = if failed {
            log::warn!("epoch {t}: no update arrived within the deadline");
            (vec![0.0; n], 0)
        } else {
            let reports: Vec<WorkerReport> = received
                .iter()
                .map(|&v| outcomes[v].as_ref().expect("arrived").report.clone())
                .collect();
            let fusion = fuse_selected(&reports, plan.rule, n)?;
            x = fusion.x;
            (fusion.weights, fusion.total_q)
        };
        let duration = listen + wait;

        starts = if plan.generalized && total_q > 0 {
            let epoch_end = duration;
            let blended = exec.map(n, |v| -> Result<ParameterVector> {
                let Some(r) = outcomes[v].as_ref() else {
                    return Ok(x.clone());
                };
                if r.report.status != WorkerStatus::Completed {
                    return Ok(x.clone());
                }
                let model = &plan.latency[v];
                let idle = epoch_end.saturating_sub(r.report.finish_time.max(listen));
                let (w, e) = (v as u64, t);
                let mut cost_rng = streams.stream(Purpose::IdleStepCost, w, e);
                let mut clock =
                    VirtualClock::new(|| model.compute.sample_duration(&mut cost_rng, r.factor));
                let mut rng = streams.stream(Purpose::IdleSampleIndex, w, e);
                let idle_out = continue_idle_updates(
                    &r.report,
                    &plan.schedule,
                    &shards[v],
                    idle,
                    &mut clock,
                    &mut rng,
                )?;
                if idle_out.status != WorkerStatus::Completed {
                    return Ok(x.clone());
                }
                generalized_blend(&x, &idle_out.x_bar, total_q, idle_out.q_bar)
            });
            blended.into_iter().collect::<Result<Vec<_>>>()?
        } else {
            vec![x.clone(); n]
        };

        wall_clock += duration;
        let error = normalized_error(dataset.samples(), &x, &x_star)?;
        log::debug!(
            "epoch {t}: {} received, Q={total_q}, error={error:.3e}, clock={:.3}s",
            received.len(),
            wall_clock.as_secs_f64()
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
    Ok(RunTrace {
        initial_error,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::problem::StepSchedule;
    use crate::sim::latency::{Dist, LatencyModel};
    use crate::sim::plan::EpochBudget;
    use crate::worker::{OutputMode, WorkerBudget};

    fn plan(n: usize, s: usize, latency: Vec<LatencyModel>, budget: EpochBudget) -> SimulationPlan {
        SimulationPlan {
            n_workers: n,
            redundancy: s,
            epochs: 3,
            budget,
            t_c: None,
            rule: CombineRule::Proportional,
            schedule: StepSchedule::Constant(0.01),
            output: OutputMode::LastIterate,
            latency,
            seed: 42,
            generalized: false,
            x0: None,
        }
    }

    fn secs(s: f64) -> Duration {
        Duration::from_secs_f64(s)
    }

    #[test]
    fn single_worker_sanity() {
        let ds = generate_synthetic(50, 3, 0.0, 1).unwrap();
        let mut p = plan(
            1,
            0,
            vec![LatencyModel::constant(secs(1.0), secs(0.5))],
            EpochBudget::Fixed(WorkerBudget::time_only(secs(10.0))),
        );
        p.epochs = 1;
        let trace = simulate_run(&p, &ds).unwrap();
        let e = &trace.epochs[0];
        assert_eq!(e.q, vec![10]);
        assert!(e.error < trace.initial_error);
        assert_eq!(e.duration, secs(10.5));
        assert_eq!(e.result.weights, vec![1.0]);
    }

    #[test]
    fn persistent_straggler_excluded_but_data_covered() {
        let ds = generate_synthetic(80, 4, 0.1, 2).unwrap();
        let mut lat = vec![LatencyModel::default(); 4];
        lat[2].persistent = true;
        let p = plan(
            4,
            1,
            lat,
            EpochBudget::Fixed(WorkerBudget::time_only(secs(0.5))),
        );
        let trace = simulate_run(&p, &ds).unwrap();
        let table = build_assignment(4, 1).unwrap();
        for e in &trace.epochs {
            assert_eq!(e.result.received, vec![0, 1, 3]);
            assert_eq!(e.result.weights[2], 0.0);
            assert_eq!(e.q[2], 0);
            for block in 0..4 {
                assert!(e.result.received.iter().any(|&v| table.holds(v, block)));
            }
        }
    }

    #[test]
    fn forced_iteration_profile() {
        let ds = generate_synthetic(1000, 5, 0.03, 3).unwrap();
        let profile = [
            10_000u64, 8500, 8000, 7500, 7250, 6800, 5500, 2000, 1500, 500,
        ];
        let t = Duration::from_nanos(650_760_000);
        let lat = profile
            .iter()
            .map(|&q| LatencyModel::constant(t / q as u32, secs(0.01)))
            .collect();
        let mut p = plan(10, 0, lat, EpochBudget::Fixed(WorkerBudget::time_only(t)));
        p.schedule = StepSchedule::Constant(1e-4);
        let trace = simulate_run(&p, &ds).unwrap();
        for e in &trace.epochs {
            assert_eq!(e.q, profile);
            assert_eq!(e.result.total_q, profile.iter().sum::<u64>());
        }
    }

    #[test]
    fn deterministic_and_execution_independent() {
        let ds = generate_synthetic(200, 5, 0.2, 4).unwrap();
        let mut p = plan(
            5,
            1,
            vec![LatencyModel::default(); 5],
            EpochBudget::Fixed(WorkerBudget::time_only(secs(0.05))),
        );
        p.generalized = true;
        let a = simulate_run(&p, &ds).unwrap();
        let b = simulate_run_with(&p, &ds, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        p.seed += 1;
        assert_ne!(simulate_run(&p, &ds).unwrap(), a);
    }

    #[test]
    fn exclusion_follows_comm_delay() {
        let ds = generate_synthetic(100, 3, 0.1, 5).unwrap();
        let lat: Vec<_> = (0..5)
            .map(|_| LatencyModel {
                comm: Dist::ShiftedExponential {
                    shift: 0.0,
                    rate: 2.0,
                },
                tail: None,
                ..LatencyModel::default()
            })
            .collect();
        let mut p = plan(
            5,
            0,
            lat,
            EpochBudget::Fixed(WorkerBudget::time_only(secs(0.02))),
        );
        p.t_c = Some(secs(0.4));
        p.epochs = 20;
        let trace = simulate_run(&p, &ds).unwrap();
        let streams = StreamFactory::new(p.seed);
        for e in &trace.epochs {
            for v in 0..5 {
                let comm = p.latency[v].comm.sample_duration(
                    &mut streams.stream(Purpose::CommDelay, v as u64, e.result.epoch),
                    1.0,
                );
                assert_eq!(e.result.received.contains(&v), comm <= secs(0.4));
            }
            if e.result.received.len() < 5 {
                assert_eq!(e.duration, secs(0.02) + secs(0.4));
            }
        }
    }

    #[test]
    fn fastest_k_waits_for_order_statistic() {
        let ds = generate_synthetic(100, 3, 0.1, 6).unwrap();
        let lat: Vec<_> = (0..4)
            .map(|v| LatencyModel::constant(secs(0.001 * (v + 1) as f64), secs(0.1)))
            .collect();
        let mut p = plan(4, 0, lat, EpochBudget::ShardPass);
        p.rule = CombineRule::FastestK { b: 2 };
        let trace = simulate_run(&p, &ds).unwrap();
        for e in &trace.epochs {
            assert_eq!(e.result.received, vec![0, 1]);
            assert_eq!(e.q, vec![25; 4]);
            // second-fastest: 25 steps of 2 ms plus comm
            assert_eq!(e.duration, secs(0.05) + secs(0.1));
        }
    }

    #[test]
    fn all_persistent_aborts() {
        let ds = generate_synthetic(20, 2, 0.1, 7).unwrap();
        let lat = vec![
            LatencyModel {
                persistent: true,
                ..LatencyModel::default()
            };
            2
        ];
        let mut p = plan(
            2,
            0,
            lat,
            EpochBudget::Fixed(WorkerBudget::time_only(secs(1.0))),
        );
        p.t_c = Some(secs(1.0));
        assert!(matches!(
            simulate_run(&p, &ds),
            Err(AtgError::AllWorkersLost { epoch: 0 })
        ));
    }

    #[test]
    fn wall_clock_strictly_increases() {
        let ds = generate_synthetic(100, 3, 0.1, 8).unwrap();
        let mut p = plan(
            3,
            1,
            vec![LatencyModel::default(); 3],
            EpochBudget::Fixed(WorkerBudget::time_only(secs(0.01))),
        );
        p.epochs = 10;
        let trace = simulate_run(&p, &ds).unwrap();
        assert!(trace
            .epochs
            .windows(2)
            .all(|w| w[1].wall_clock > w[0].wall_clock));
    }

    #[test]
    fn generalized_without_idle_time_matches_plain() {
        // Constant costs that exactly fill T leave no idle steps when the comm
        // delay is shorter than one step.
        let ds = generate_synthetic(100, 3, 0.1, 9).unwrap();
        let lat = vec![LatencyModel::constant(secs(0.01), Duration::from_millis(5)); 3];
        let mut p = plan(
            3,
            0,
            lat,
            EpochBudget::Fixed(WorkerBudget::time_only(secs(0.1))),
        );
        let plain = simulate_run(&p, &ds).unwrap();
        p.generalized = true;
        assert_eq!(simulate_run(&p, &ds).unwrap(), plain);
    }
}
