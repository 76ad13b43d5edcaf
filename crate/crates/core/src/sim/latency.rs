use std::time::Duration;

use rand::Rng;
use rand_distr::{Distribution, Exp, Pareto};

use crate::error::{AtgError, Result};

/// Positive delay distribution, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Constant(Duration),
    ShiftedExponential { shift: f64, rate: f64 },
    Pareto { scale: f64, shape: f64 },
}

impl Dist {
    pub fn constant_secs(s: f64) -> Self {
        Dist::Constant(Duration::from_secs_f64(s))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Dist::Constant(c) => c > Duration::ZERO,
            Dist::ShiftedExponential { shift, rate } => {
                shift.is_finite() && shift >= 0.0 && rate.is_finite() && rate > 0.0
            }
            Dist::Pareto { scale, shape } => {
                scale.is_finite() && scale > 0.0 && shape.is_finite() && shape > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(AtgError::invalid(format!(
                "{self:?} does not give positive draws"
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Constant(c) => c.as_secs_f64(),
            Dist::ShiftedExponential { shift, rate } => shift + 1.0 / rate,
            Dist::Pareto { scale, shape } if shape > 1.0 => shape * scale / (shape - 1.0),
            Dist::Pareto { .. } => f64::INFINITY,
        }
    }

    /// One draw in seconds; assumes `validate` passed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Constant(c) => c.as_secs_f64(),
            Dist::ShiftedExponential { shift, rate } => {
                shift + Exp::new(rate).expect("validated").sample(rng)
            }
            Dist::Pareto { scale, shape } => {
                Pareto::new(scale, shape).expect("validated").sample(rng)
            }
        }
    }

    /// One draw scaled by `factor`. Constants stay exact when `factor == 1`.
    pub fn sample_duration<R: Rng + ?Sized>(&self, rng: &mut R, factor: f64) -> Duration {
        match *self {
            Dist::Constant(c) if factor == 1.0 => c,
            _ => secs(self.sample(rng) * factor),
        }
    }
}

fn secs(s: f64) -> Duration {
    Duration::try_from_secs_f64(s).unwrap_or(Duration::MAX)
}

/// With probability `prob`, a whole epoch on one worker is slowed by a factor
/// drawn from `dist`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tail {
    pub prob: f64,
    pub dist: Dist,
}

impl Default for Tail {
    fn default() -> Self {
        Self {
            prob: 0.04,
            dist: Dist::Pareto {
                scale: 2.5,
                shape: 1.5,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub compute: Dist,
    pub comm: Dist,
    /// Never returns an update.
    pub persistent: bool,
    pub slowdown: f64,
    pub tail: Option<Tail>,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            compute: Dist::ShiftedExponential {
                shift: 1e-3,
                rate: 1e3,
            },
            comm: Dist::ShiftedExponential {
                shift: 0.05,
                rate: 20.0,
            },
            persistent: false,
            slowdown: 1.0,
            tail: Some(Tail::default()),
        }
    }
}

impl LatencyModel {
    pub fn constant(step: Duration, comm: Duration) -> Self {
        Self {
            compute: Dist::Constant(step),
            comm: Dist::Constant(comm),
            persistent: false,
            slowdown: 1.0,
            tail: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.compute.validate()?;
        self.comm.validate()?;
        if !(self.slowdown.is_finite() && self.slowdown >= 1.0) {
            return Err(AtgError::invalid(format!(
                "slowdown must be >= 1, got {}",
                self.slowdown
            )));
        }
        if let Some(t) = &self.tail {
            if !(0.0..=1.0).contains(&t.prob) {
                return Err(AtgError::invalid(format!(
                    "tail probability {} not in [0,1]",
                    t.prob
                )));
            }
            t.dist.validate()?;
        }
        Ok(())
    }

    /// Per-epoch slowdown, including a possible tail event.
    pub fn epoch_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let tail = match &self.tail {
            Some(t) if t.prob > 0.0 && rng.random::<f64>() < t.prob => t.dist.sample(rng).max(1.0),
            _ => 1.0,
        };
        self.slowdown * tail
    }
}

/// One per-step compute time, or `None` for a persistent straggler.
pub fn sample_step_time<R: Rng + ?Sized>(model: &LatencyModel, rng: &mut R) -> Option<Duration> {
    (!model.persistent).then(|| model.compute.sample_duration(rng, model.slowdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamFactory};

    fn empirical_mean(d: Dist) -> f64 {
        let mut rng = StreamFactory::new(77).stream(Purpose::StepCost, 0, 0);
        let n = 100_000;
        (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64
    }

    #[test]
    fn constant_is_constant() {
        let m = LatencyModel::constant(
            Duration::from_millis(2500),
            Duration::ZERO + Duration::from_nanos(1),
        );
        let mut rng = StreamFactory::new(1).stream(Purpose::StepCost, 0, 0);
        for _ in 0..10 {
            assert_eq!(
                sample_step_time(&m, &mut rng),
                Some(Duration::from_millis(2500))
            );
        }
    }

    #[test]
    fn shifted_exponential_mean() {
        let d = Dist::ShiftedExponential {
            shift: 1.0,
            rate: 1.0,
        };
        let mean = empirical_mean(d);
        assert!((1.98..=2.02).contains(&mean), "mean = {mean}");
        assert_eq!(d.mean(), 2.0);
    }

    #[test]
    fn pareto_mean() {
        let d = Dist::Pareto {
            scale: 1.0,
            shape: 1.5,
        };
        let mean = empirical_mean(d);
        assert!((2.9..=3.1).contains(&mean), "mean = {mean}");
        assert_eq!(d.mean(), 3.0);
    }

    #[test]
    fn persistent_never_sampled() {
        let m = LatencyModel {
            persistent: true,
            ..LatencyModel::default()
        };
        let mut rng = StreamFactory::new(1).stream(Purpose::StepCost, 0, 0);
        assert_eq!(sample_step_time(&m, &mut rng), None);
    }

    #[test]
    fn default_tail_calibration() {
        // Fraction of epochs at least 2.5x slower than the median epoch.
        let m = LatencyModel::default();
        let streams = StreamFactory::new(5);
        let n = 20_000u64;
        let mut factors: Vec<f64> = (0..n)
            .map(|e| m.epoch_factor(&mut streams.stream(Purpose::EpochTail, 0, e)))
            .collect();
        factors.sort_by(f64::total_cmp);
        let median = factors[factors.len() / 2];
        let frac = factors.iter().filter(|&&f| f > 2.5 * median).count() as f64 / n as f64;
        assert!((0.03..0.05).contains(&frac), "frac = {frac}");
    }

    #[test]
    fn validation() {
        assert!(Dist::Constant(Duration::ZERO).validate().is_err());
        assert!(Dist::ShiftedExponential {
            shift: 0.0,
            rate: 0.0
        }
        .validate()
        .is_err());
        assert!(Dist::Pareto {
            scale: -1.0,
            shape: 2.0
        }
        .validate()
        .is_err());
        let m = LatencyModel {
            slowdown: 0.5,
            ..LatencyModel::default()
        };
        assert!(m.validate().is_err());
        assert!(LatencyModel::default().validate().is_ok());
    }
}
