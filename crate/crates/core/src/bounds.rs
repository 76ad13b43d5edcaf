//! Closed-form error bounds for weighted combinations of independent SGD runs,
//! and Monte Carlo checks of them.

use serde::Serialize;

use crate::clock::VirtualClock;
use crate::data::{least_squares, Dataset};
use crate::error::{AtgError, Result};
use crate::exec::Execution;
use crate::problem::{
    estimate_constants, objective, DataSample, ParameterVector, ProblemConstants, StepSchedule,
};
use crate::rng::{Purpose, StreamFactory};
use crate::worker::{run_worker_epoch, OutputMode, WorkerBudget, WorkerConfig, WorkerStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub constants: ProblemConstants,
    pub weights: Vec<f64>,
    pub q: Vec<u64>,
    /// `F(x0) − F(x*)`.
    pub gap: f64,
    pub delta: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        if self.weights.len() != self.q.len() || self.q.is_empty() {
            return Err(AtgError::DimensionMismatch {
                expected: self.q.len(),
                actual: self.weights.len(),
            });
        }
        if self.weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(AtgError::invalid("weights must be nonnegative"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AtgError::invalid(format!("weights sum to {sum}, not 1")));
        }
        if self
            .weights
            .iter()
            .zip(&self.q)
            .any(|(&w, &q)| w > 0.0 && q == 0)
        {
            return Err(AtgError::invalid(
                "a positively weighted worker needs q >= 1",
            ));
        }
        if !self.gap.is_finite() {
            return Err(AtgError::NonFinite("gap"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(AtgError::invalid(format!(
                "delta must be in (0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// `max_v λ_v / q_v` over weighted workers.
    pub fn gamma(&self) -> f64 {
        self.active().map(|(w, q)| w / q).fold(0.0, f64::max)
    }

    /// `Σ_v λ_v² / q_v`.
    pub fn weighted_inverse_work(&self) -> f64 {
        self.active().map(|(w, q)| w * w / q).sum()
    }

    fn active(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.q)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, &q)| (w, q as f64))
    }
}

/// `Σ_v (λ_v/q_v) [gap + L D² + 2 σ D √q_v]`.
pub fn expected_distance_bound(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    let c = &inp.constants;
    let base = inp.gap + c.lipschitz * c.diameter * c.diameter;
    Ok(inp
        .active()
        .map(|(w, q)| w / q * (base + 2.0 * c.sigma * c.diameter * q.sqrt()))
        .sum())
}

/// `2 D² (G² + 2σ²) Σ_v λ_v²/q_v`, which is `2σ²D²(G²/σ² + 2) Σ λ²/q`
/// written so that σ = 0 is allowed.
pub fn variance_bound(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    Ok(variance_scale(&inp.constants) * inp.weighted_inverse_work())
}

/// `2 D² (G² + 2σ²)`: the variance bound times `Q` at the optimal weights.
pub fn variance_scale(c: &ProblemConstants) -> f64 {
    2.0 * c.diameter * c.diameter * (c.grad_bound * c.grad_bound + 2.0 * c.sigma * c.sigma)
}

/// Deviation of the combined output from its mean that holds with
/// probability at least `1 − δ`.
pub fn high_probability_bound(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    let c = &inp.constants;
    let log = (1.0 / inp.delta).ln();
    if log == 0.0 || c.grad_bound == 0.0 {
        return Ok(0.0);
    }
    if c.sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    let prefix =
        inp.gamma() * 2.0 * c.grad_bound * c.diameter * (c.grad_bound + 2.0 * c.sigma) / c.sigma;
    let v = 36.0
        * c.diameter
        * c.diameter
        * inp.weighted_inverse_work()
        * (c.grad_bound * c.grad_bound + 2.0 * c.sigma * c.sigma);
    Ok(prefix * (log * log + v * log).sqrt())
}

/// `λ_v = q_v / Σ q`, the minimizer of `Σ λ_v²/q_v` on the simplex.
pub fn optimal_weights(q: &[u64]) -> Result<Vec<f64>> {
    if q.is_empty() || q.contains(&0) {
        return Err(AtgError::invalid("optimal weights need every q_v >= 1"));
    }
    let total: u64 = q.iter().sum();
    Ok(q.iter().map(|&v| v as f64 / total as f64).collect())
}

/// `λᵀ R λ` with `R = diag(1/q)`.
pub fn weighted_variance(weights: &[f64], q: &[u64]) -> f64 {
    weights
        .iter()
        .zip(q)
        .map(|(w, &q)| if *w == 0.0 { 0.0 } else { w * w / q as f64 })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StartPoint {
    /// Start at the least-squares optimum.
    Optimum,
    /// Start at a seeded random point at `distance` from the optimum.
    Offset {
        distance: f64,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub q: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
    /// Radius of the ball around `x*` used for the constants.
    pub radius: f64,
    pub output: OutputMode,
    pub start: StartPoint,
    pub delta: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            q: vec![100, 100],
            trials: 200,
            seed: 0,
            radius: 1.0,
            output: OutputMode::RunningAverage,
            start: StartPoint::Optimum,
            delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub q: Vec<u64>,
    pub total_q: u64,
    pub trials: usize,
    pub constants: ProblemConstants,
    pub initial_gap: f64,
    pub mean_gap: f64,
    pub var_gap: f64,
    pub expected_distance_bound: f64,
    pub variance_bound: f64,
    pub delta: f64,
    pub high_probability_bound: f64,
    /// Fraction of trials with `gap − mean_gap` above the high-probability bound.
    pub tail_fraction: f64,
    #[serde(skip)]
    pub gaps: Vec<f64>,
}

pub fn monte_carlo_validate(dataset: &Dataset, cfg: &MonteCarloConfig) -> Result<MonteCarloReport> {
    monte_carlo_validate_with(dataset, cfg, Execution::default())
}

/// Runs `trials` independent rounds in which every worker does exactly `q_v`
/// SGD steps from a common start with global sampling, fuses them with the
/// optimal weights, and records `F(x) − F(x*)`.
pub fn monte_carlo_validate_with(
    dataset: &Dataset,
    cfg: &MonteCarloConfig,
    exec: Execution,
) -> Result<MonteCarloReport> {
    if cfg.trials < 2 {
        return Err(AtgError::invalid("Monte Carlo needs at least two trials"));
    }
    let weights = optimal_weights(&cfg.q)?;
    let samples = dataset.samples();
    let x_star = least_squares(samples)?;
    let constants = estimate_constants(samples, &x_star, cfg.radius)?;
    let schedule = StepSchedule::Decaying(constants);
    schedule.validate()?;

    let streams = StreamFactory::new(cfg.seed);
    let x0 = match cfg.start {
        StartPoint::Optimum => x_star.clone(),
        StartPoint::Zero => ParameterVector::zeros(dataset.dim()),
        StartPoint::Offset { distance } => {
            let mut rng = streams.stream(Purpose::InitialPoint, 0, 0);
            let dir: Vec<f64> = (0..dataset.dim())
                .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
                .collect();
            let n = dir.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            ParameterVector::new(
                x_star
                    .iter()
                    .zip(&dir)
                    .map(|(c, d)| c + d * distance / n)
                    .collect(),
            )?
        }
    };
    let f_star = objective(&x_star, samples)?;
    let initial_gap = objective(&x0, samples)? - f_star;
    let shard: Vec<&DataSample> = samples.iter().collect();

    let gaps = exec.map(cfg.trials, |trial| -> Result<f64> {
        let mut x = vec![0.0; dataset.dim()];
        for (v, (&q, &w)) in cfg.q.iter().zip(&weights).enumerate() {
            let config = WorkerConfig {
                schedule,
                budget: WorkerBudget::iterations(q),
                output: cfg.output,
            };
            let mut clock = VirtualClock::new(|| std::time::Duration::from_nanos(1));
            let mut rng = streams.stream(Purpose::MonteCarlo, trial as u64, v as u64);
            let r = run_worker_epoch(v, 0, &shard, &x0, &config, &mut clock, &mut rng)?;
            if r.status != WorkerStatus::Completed {
                return Err(AtgError::NonFinite("Monte Carlo iterate"));
            }
            x.iter_mut()
                .zip(r.iterate.iter())
                .for_each(|(a, b)| *a += w * b);
        }
        Ok(objective(&ParameterVector::new(x)?, samples)? - f_star)
    });
    let gaps = gaps.into_iter().collect::<Result<Vec<f64>>>()?;

    let n = gaps.len() as f64;
    let mean_gap = gaps.iter().sum::<f64>() / n;
    let var_gap = gaps.iter().map(|g| (g - mean_gap).powi(2)).sum::<f64>() / (n - 1.0);
    let inputs = BoundInputs {
        constants,
        weights,
        q: cfg.q.clone(),
        gap: initial_gap.max(0.0),
        delta: cfg.delta,
    };
    let hp = high_probability_bound(&inputs)?;
    let tail_fraction = gaps.iter().filter(|&&g| g - mean_gap > hp).count() as f64 / n;
    Ok(MonteCarloReport {
        total_q: cfg.q.iter().sum(),
        q: cfg.q.clone(),
        trials: cfg.trials,
        constants,
        initial_gap,
        mean_gap,
        var_gap,
        expected_distance_bound: expected_distance_bound(&inputs)?,
        variance_bound: variance_bound(&inputs)?,
        delta: cfg.delta,
        high_probability_bound: hp,
        tail_fraction,
        gaps,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(AtgError::invalid(
            "slope fit needs at least two paired points",
        ));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(AtgError::invalid(
            "log-log fit needs positive finite values",
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AtgError::invalid("slope fit needs distinct x values"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use proptest::prelude::{prop, prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> ProblemConstants {
        ProblemConstants::new(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn inputs(weights: Vec<f64>, q: Vec<u64>) -> BoundInputs {
        BoundInputs {
            constants: unit(),
            weights,
            q,
            gap: 0.0,
            delta: 0.5,
        }
    }

    #[test]
    fn expected_distance_examples() {
        assert!(
            (expected_distance_bound(&inputs(vec![1.0], vec![1])).unwrap() - 3.0).abs() < 1e-12
        );
        let b = expected_distance_bound(&inputs(vec![0.5, 0.5], vec![4, 4])).unwrap();
        assert!((b - 1.25).abs() < 1e-12);
        // 1/sqrt(q) decay with fixed weights
        let at = |k: u64| expected_distance_bound(&inputs(vec![0.5, 0.5], vec![k, k])).unwrap();
        let ratio = at(1_000_000) / at(4_000_000);
        assert!((ratio - 2.0).abs() < 1e-2, "ratio = {ratio}");
    }

    #[test]
    fn variance_examples() {
        assert!((variance_bound(&inputs(vec![1.0], vec![1])).unwrap() - 6.0).abs() < 1e-12);
        let q = vec![2, 3, 5];
        let v = variance_bound(&inputs(optimal_weights(&q).unwrap(), q)).unwrap();
        assert!((v - 0.6).abs() < 1e-12);
    }

    #[test]
    fn variance_identity_at_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(1..10);
            let q: Vec<u64> = (0..n).map(|_| rng.random_range(1..10_000)).collect();
            let c = ProblemConstants::new(
                rng.random_range(0.1..10.0),
                rng.random_range(0.1..2.0),
                rng.random_range(0.1..5.0),
                rng.random_range(1.0..3.0),
            )
            .unwrap();
            let inp = BoundInputs {
                constants: c,
                weights: optimal_weights(&q).unwrap(),
                q: q.clone(),
                gap: 0.0,
                delta: 1.0,
            };
            let total: u64 = q.iter().sum();
            let lhs = variance_bound(&inp).unwrap() * total as f64;
            let rhs = 2.0
                * c.sigma.powi(2)
                * c.diameter.powi(2)
                * (c.grad_bound.powi(2) / c.sigma.powi(2) + 2.0);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn high_probability_examples() {
        let mut inp = inputs(vec![1.0], vec![1]);
        inp.delta = 1.0;
        assert_eq!(high_probability_bound(&inp).unwrap(), 0.0);
        inp.delta = (-1.0f64).exp();
        let b = high_probability_bound(&inp).unwrap();
        assert!((b - 6.0 * 109f64.sqrt()).abs() < 1e-9, "b = {b}");
        for bad in [0.0, -0.1, 1.5] {
            inp.delta = bad;
            assert!(high_probability_bound(&inp).is_err());
        }
    }

    #[test]
    fn high_probability_decays_like_inverse_q() {
        let at = |k: u64| {
            let q = vec![k, k];
            let mut inp = inputs(optimal_weights(&q).unwrap(), q);
            inp.delta = 0.1;
            high_probability_bound(&inp).unwrap()
        };
        let slope = loglog_slope(
            &[1e4, 1e5, 1e6, 1e7],
            &[at(10_000), at(100_000), at(1_000_000), at(10_000_000)],
        )
        .unwrap();
        assert!((slope + 1.0).abs() < 0.05, "slope = {slope}");
    }

    #[test]
    fn optimal_weight_examples() {
        assert_eq!(optimal_weights(&[1, 1]).unwrap(), vec![0.5, 0.5]);
        let w = optimal_weights(&[2, 3, 5]).unwrap();
        assert!(w
            .iter()
            .zip([0.2, 0.3, 0.5])
            .all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(optimal_weights(&[1, 0]).is_err());
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(variance_bound(&inputs(vec![0.7, 0.7], vec![1, 1])).is_err());
        assert!(variance_bound(&inputs(vec![1.0, 0.0], vec![1])).is_err());
        assert!(variance_bound(&inputs(vec![0.5, 0.5], vec![0, 1])).is_err());
        assert!(variance_bound(&inputs(vec![1.0, 0.0], vec![1, 0])).is_ok());
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 10.0, 100.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() + 1.5).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_small_instance() {
        let ds = generate_synthetic(60, 3, 0.5, 3).unwrap();
        let cfg = MonteCarloConfig {
            q: vec![20, 40],
            trials: 100,
            seed: 1,
            start: StartPoint::Offset { distance: 0.5 },
            ..MonteCarloConfig::default()
        };
        let r = monte_carlo_validate(&ds, &cfg).unwrap();
        assert_eq!(r.total_q, 60);
        assert!(r.mean_gap >= 0.0 && r.var_gap > 0.0);
        assert!(r.mean_gap <= r.expected_distance_bound);
        assert!(r.initial_gap > 0.0);
        let again = monte_carlo_validate_with(&ds, &cfg, Execution::Sequential).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn monte_carlo_rejects_singular_system() {
        let samples = (0..10)
            .map(|i| DataSample::new(vec![1.0, 1.0], i as f64).unwrap())
            .collect();
        let ds = Dataset::new(samples, None).unwrap();
        assert!(matches!(
            monte_carlo_validate(&ds, &MonteCarloConfig::default()),
            Err(AtgError::SingularSystem)
        ));
    }

    fn reoptimized(q: &[u64], f: fn(&BoundInputs) -> Result<f64>) -> f64 {
        let mut inp = inputs(optimal_weights(q).unwrap(), q.to_vec());
        inp.delta = 0.1;
        f(&inp).unwrap()
    }

    proptest! {
        #[test]
        fn variance_and_tail_bounds_monotone_in_work(
            q in prop::collection::vec(1u64..500, 1..6),
            idx in 0usize..6,
            extra in 1u64..500,
        ) {
            let i = idx % q.len();
            let mut more = q.clone();
            more[i] += extra;
            for f in [variance_bound as fn(&BoundInputs) -> Result<f64>, high_probability_bound] {
                prop_assert!(reoptimized(&more, f) <= reoptimized(&q, f) * (1.0 + 1e-12));
            }
        }

        #[test]
        fn expected_distance_monotone_with_fixed_weights(
            q in prop::collection::vec(1u64..500, 1..6),
            raw in prop::collection::vec(0.01f64..1.0, 6),
            idx in 0usize..6,
            extra in 1u64..500,
        ) {
            let n = q.len();
            let total: f64 = raw[..n].iter().sum();
            let w: Vec<f64> = raw[..n].iter().map(|v| v / total).collect();
            let i = idx % n;
            let mut more = q.clone();
            more[i] += extra;
            let a = expected_distance_bound(&inputs(w.clone(), q)).unwrap();
            let b = expected_distance_bound(&inputs(w, more)).unwrap();
            prop_assert!(b <= a * (1.0 + 1e-12));
        }
    }

    #[test]
    fn expected_distance_not_monotone_when_reoptimized() {
        let a = reoptimized(&[1, 100], expected_distance_bound);
        let b = reoptimized(&[2, 100], expected_distance_bound);
        assert!(b > a);
    }
}
