use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use atg_core::combine::CombineRule;
use atg_core::data::generate_synthetic;
use atg_core::exec::Execution;
use atg_core::problem::StepSchedule;
use atg_core::sim::{simulate_run_with, EpochBudget, LatencyModel, SimulationPlan};
use atg_core::worker::{OutputMode, WorkerBudget};

fn plan(n: usize) -> SimulationPlan {
    SimulationPlan {
        n_workers: n,
        redundancy: 1,
        epochs: 3,
        budget: EpochBudget::Fixed(WorkerBudget::time_only(Duration::from_millis(500))),
        t_c: None,
        rule: CombineRule::Proportional,
        schedule: StepSchedule::Constant(1e-4),
        output: OutputMode::LastIterate,
        latency: (0..n)
            .map(|v| LatencyModel {
                slowdown: 1.0 + v as f64 / n as f64,
                ..LatencyModel::default()
            })
            .collect(),
        seed: 1,
        generalized: false,
        x0: None,
    }
}

fn bench(c: &mut Criterion) {
    let ds = generate_synthetic(5000, 100, 0.03, 0).unwrap();
    let mut group = c.benchmark_group("simulate_run");
    group.sample_size(10);
    let modes = [
        ("sequential", Execution::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Execution::Parallel),
    ];
    for n in [4usize, 16] {
        let p = plan(n);
        for &(name, exec) in &modes {
            group.bench_with_input(BenchmarkId::new(name, n), &p, |b, p| {
                b.iter(|| simulate_run_with(black_box(p), &ds, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
