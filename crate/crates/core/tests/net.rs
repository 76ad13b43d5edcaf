use std::thread;
use std::time::Duration;

use atg_core::combine::CombineRule;
use atg_core::data::{generate_synthetic, write_cache};
use atg_core::net::{
    run_worker_process, DataMode, Master, MasterConfig, WorkerExit, WorkerOptions,
};
use atg_core::problem::StepSchedule;
use atg_core::sim::{simulate_run, EpochBudget, LatencyModel, SimulationPlan};
use atg_core::worker::{OutputMode, WorkerBudget};

fn config(n: usize, s: usize, epochs: u64) -> MasterConfig {
    MasterConfig {
        n_workers: n,
        redundancy: s,
        epochs,
        budget: WorkerBudget::time_only(Duration::from_millis(150)),
        forced_caps: None,
        t_c: Duration::from_secs(2),
        rule: CombineRule::Proportional,
        schedule: StepSchedule::Constant(0.005),
        output: OutputMode::LastIterate,
        seed: 7,
        data: DataMode::Inline,
        handshake_timeout: Duration::from_secs(10),
        x0: None,
    }
}

fn spawn_workers(
    addr: std::net::SocketAddr,
    opts: Vec<WorkerOptions>,
) -> Vec<thread::JoinHandle<atg_core::Result<WorkerExit>>> {
    opts.into_iter()
        .map(|o| thread::spawn(move || run_worker_process(addr, o)))
        .collect()
}

#[test]
fn two_worker_run_reduces_error() {
    let ds = generate_synthetic(400, 5, 0.05, 1).unwrap();
    let master = Master::bind("127.0.0.1:0").unwrap();
    let addr = master.local_addr().unwrap();
    let workers = spawn_workers(addr, vec![WorkerOptions::default(); 2]);
    let trace = master.run(&config(2, 0, 4), &ds).unwrap();
    for w in workers {
        assert_eq!(
            w.join().unwrap().unwrap(),
            WorkerExit::Stopped { epochs: 4 }
        );
    }
    assert_eq!(trace.epochs.len(), 4);
    assert!(trace.final_error() < trace.initial_error);
    assert!(trace.epochs.iter().all(|e| e.result.received == vec![0, 1]));
}

#[test]
fn shared_file_mode_loads_blocks() {
    let ds = generate_synthetic(300, 4, 0.05, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.atg");
    write_cache(&ds, &path).unwrap();
    let mut cfg = config(3, 1, 2);
    cfg.data = DataMode::SharedFile(path);
    let master = Master::bind("127.0.0.1:0").unwrap();
    let addr = master.local_addr().unwrap();
    let workers = spawn_workers(addr, vec![WorkerOptions::default(); 3]);
    let trace = master.run(&cfg, &ds).unwrap();
    for w in workers {
        w.join().unwrap().unwrap();
    }
    assert!(trace.final_error() < trace.initial_error);
}

#[test]
fn killed_worker_becomes_persistent_straggler() {
    let ds = generate_synthetic(300, 4, 0.05, 3).unwrap();
    let master = Master::bind("127.0.0.1:0").unwrap();
    let addr = master.local_addr().unwrap();
    let mut opts = [WorkerOptions::default(); 3];
    let mut cfg = config(3, 1, 5);
    cfg.t_c = Duration::from_millis(500);
    // Workers get ids in connection order; start the faulty one first.
    opts[0].exit_after_epochs = Some(2);
    let faulty = spawn_workers(addr, vec![opts[0]]);
    thread::sleep(Duration::from_millis(200));
    let healthy = spawn_workers(addr, opts[1..].to_vec());
    let trace = master.run(&cfg, &ds).unwrap();
    assert_eq!(
        faulty.into_iter().next().unwrap().join().unwrap().unwrap(),
        WorkerExit::FaultInjected { epochs: 2 }
    );
    for w in healthy {
        w.join().unwrap().unwrap();
    }
    assert_eq!(trace.epochs.len(), 5);
    for e in &trace.epochs[..2] {
        assert_eq!(e.result.received.len(), 3);
    }
    for e in &trace.epochs[2..] {
        assert_eq!(e.result.received, vec![1, 2]);
        assert_eq!(e.result.weights[0], 0.0);
    }
}

#[test]
fn forced_counts_match_simulator() {
    let ds = generate_synthetic(500, 6, 0.1, 4).unwrap();
    let caps = vec![120u64, 80, 30];
    let mut cfg = config(3, 0, 3);
    cfg.forced_caps = Some(caps.clone());

    let master = Master::bind("127.0.0.1:0").unwrap();
    let addr = master.local_addr().unwrap();
    let workers = spawn_workers(addr, vec![WorkerOptions::default(); 3]);
    let net = master.run(&cfg, &ds).unwrap();
    for w in workers {
        w.join().unwrap().unwrap();
    }

    let t = Duration::from_millis(240);
    let plan = SimulationPlan {
        n_workers: 3,
        redundancy: 0,
        epochs: 3,
        budget: EpochBudget::Fixed(WorkerBudget::time_only(t)),
        t_c: None,
        rule: CombineRule::Proportional,
        schedule: cfg.schedule,
        output: OutputMode::LastIterate,
        latency: caps
            .iter()
            .map(|&q| LatencyModel::constant(t / q as u32, Duration::from_millis(1)))
            .collect(),
        seed: cfg.seed,
        generalized: false,
        x0: None,
    };
    let sim = simulate_run(&plan, &ds).unwrap();
    for (a, b) in net.epochs.iter().zip(&sim.epochs) {
        assert_eq!(a.q, caps);
        assert_eq!(b.q, caps);
        for (x, y) in a.result.x.iter().zip(b.result.x.iter()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
}

#[test]
fn handshake_times_out_without_workers() {
    let ds = generate_synthetic(50, 2, 0.1, 5).unwrap();
    let mut cfg = config(2, 0, 1);
    cfg.handshake_timeout = Duration::from_millis(100);
    let master = Master::bind("127.0.0.1:0").unwrap();
    assert!(master.run(&cfg, &ds).is_err());
}
