//! Least-squares loss landscape, step-size schedules, the normalized error
//! metric, and empirical estimates of the analysis constants.
//!
//! The objective is the sample mean `F(x) = (1/m) Σ (b_kᵀx − y_k)²`, so that
//! `F(x) = E[f(x, a)]` under uniform sampling.

use std::ops::Deref;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AtgError, Result};
use crate::rng::{Purpose, StreamFactory};

/// One labelled row `(b, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSample {
    pub features: Vec<f64>,
    pub label: f64,
}

impl DataSample {
    pub fn new(features: Vec<f64>, label: f64) -> Result<Self> {
        if !label.is_finite() || features.iter().any(|v| !v.is_finite()) {
            return Err(AtgError::NonFinite("data sample"));
        }
        Ok(Self { features, label })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// `bᵀx − y`, unchecked.
    #[inline]
    pub(crate) fn residual(&self, x: &[f64]) -> f64 {
        dot(&self.features, x) - self.label
    }
}

/// Dense model vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AtgError::NonFinite("parameter vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps values that may contain non-finite entries (e.g. a diverged iterate).
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn distance(&self, other: &ParameterVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dim(x: &[f64], sample: &DataSample) -> Result<()> {
    if x.len() != sample.dim() {
        return Err(AtgError::DimensionMismatch {
            expected: sample.dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Per-sample squared loss `(bᵀx − y)²`.
pub fn loss(x: &ParameterVector, sample: &DataSample) -> Result<f64> {
    check_dim(x, sample)?;
    let r = sample.residual(x);
    Ok(r * r)
}

/// Per-sample gradient `2(bᵀx − y)b`.
pub fn gradient(x: &ParameterVector, sample: &DataSample) -> Result<ParameterVector> {
    check_dim(x, sample)?;
    let scale = 2.0 * sample.residual(x);
    Ok(ParameterVector(
        sample.features.iter().map(|b| scale * b).collect(),
    ))
}

/// In-place SGD step `x ← x − rate·∇f(x, sample)`.
#[inline]
pub(crate) fn sgd_step(x: &mut [f64], sample: &DataSample, rate: f64) {
    let scale = 2.0 * rate * sample.residual(x);
    for (xi, bi) in x.iter_mut().zip(&sample.features) {
        *xi -= scale * bi;
    }
}

/// Mean objective `(1/m) Σ f_k(x)`.
pub fn objective<'a, I>(x: &ParameterVector, samples: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a DataSample>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        check_dim(x, s)?;
        let r = s.residual(x);
        total += r * r;
        count += 1;
    }
    if count == 0 {
        return Err(AtgError::invalid("objective over an empty sample set"));
    }
    Ok(total / count as f64)
}

/// Gradient of the mean objective.
pub fn full_gradient(x: &ParameterVector, samples: &[DataSample]) -> Result<ParameterVector> {
    if samples.is_empty() {
        return Err(AtgError::invalid("gradient over an empty sample set"));
    }
    let mut g = vec![0.0; x.len()];
    for s in samples {
        check_dim(x, s)?;
        let scale = 2.0 * s.residual(x);
        for (gi, bi) in g.iter_mut().zip(&s.features) {
            *gi += scale * bi;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok(ParameterVector(g))
}

/// Smoothness, noise, domain and gradient-norm constants `(L, σ, D, G)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub lipschitz: f64,
    pub sigma: f64,
    pub diameter: f64,
    pub grad_bound: f64,
}

impl ProblemConstants {
    pub fn new(lipschitz: f64, sigma: f64, diameter: f64, grad_bound: f64) -> Result<Self> {
        let c = Self {
            lipschitz,
            sigma,
            diameter,
            grad_bound,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("L", self.lipschitz),
            ("sigma", self.sigma),
            ("D", self.diameter),
            ("G", self.grad_bound),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(AtgError::invalid(format!(
                    "constant {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        // noise is a difference of two vectors each bounded by G
        if self.sigma > 2.0 * self.grad_bound * (1.0 + 1e-12) {
            return Err(AtgError::invalid(format!(
                "sigma {} exceeds 2G = {}",
                self.sigma,
                2.0 * self.grad_bound
            )));
        }
        Ok(())
    }
}

/// Learning-rate schedule handed to workers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    /// Rate `1 / (L + √(t+1)·σ/D)`.
    Decaying(ProblemConstants),
    Constant(f64),
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Decaying(c) => {
                c.validate()?;
                if c.sigma <= 0.0 || c.diameter <= 0.0 {
                    return Err(AtgError::invalid(
                        "decaying schedule needs sigma > 0 and D > 0; use a constant rate",
                    ));
                }
                Ok(())
            }
            StepSchedule::Constant(rate) => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(AtgError::invalid(format!(
                        "constant rate must be positive, got {rate}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Rate for local iteration `t`; assumes `validate` passed.
    #[inline]
    pub(crate) fn rate_unchecked(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Decaying(c) => {
                1.0 / (c.lipschitz + ((t + 1) as f64).sqrt() * c.sigma / c.diameter)
            }
            StepSchedule::Constant(rate) => rate,
        }
    }
}

pub fn learning_rate(schedule: &StepSchedule, t: u64) -> Result<f64> {
    schedule.validate()?;
    Ok(schedule.rate_unchecked(t))
}

/// `‖A x_t − A x*‖ / ‖A x*‖` over the rows of `samples`.
pub fn normalized_error(
    samples: &[DataSample],
    x_t: &ParameterVector,
    x_star: &ParameterVector,
) -> Result<f64> {
    if x_t.len() != x_star.len() {
        return Err(AtgError::DimensionMismatch {
            expected: x_star.len(),
            actual: x_t.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        check_dim(x_star, s)?;
        let a_star = dot(&s.features, x_star);
        let a_t = dot(&s.features, x_t);
        num += (a_t - a_star) * (a_t - a_star);
        den += a_star * a_star;
    }
    if den <= 0.0 {
        return Err(AtgError::DegenerateReference);
    }
    Ok((num / den).sqrt())
}

/// Inflation applied to empirical maxima of G and σ.
pub const SAFETY_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy)]
pub struct EstimateOptions {
    /// Probe points drawn in the ball, in addition to its center.
    pub points: usize,
    pub seed: u64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            points: 64,
            seed: 0x5eed_c057,
        }
    }
}

pub fn estimate_constants(
    samples: &[DataSample],
    x_ref: &ParameterVector,
    radius: f64,
) -> Result<ProblemConstants> {
    estimate_constants_with(samples, x_ref, radius, EstimateOptions::default())
}

/// `L` is exact for squared loss; `G` and `σ` are maxima over probe points in
/// the ball of `radius` around `x_ref`, inflated by [`SAFETY_FACTOR`]. Half of
/// the probes lie on the sphere, where both maxima are attained for this loss.
pub fn estimate_constants_with(
    samples: &[DataSample],
    x_ref: &ParameterVector,
    radius: f64,
    opts: EstimateOptions,
) -> Result<ProblemConstants> {
    if samples.is_empty() {
        return Err(AtgError::invalid(
            "cannot estimate constants of an empty dataset",
        ));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(AtgError::invalid(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let d = x_ref.len();
    for s in samples {
        check_dim(x_ref, s)?;
    }

    let lipschitz = samples
        .iter()
        .map(|s| 2.0 * dot(&s.features, &s.features))
        .fold(0.0, f64::max);

    let mut rng = StreamFactory::new(opts.seed).stream(Purpose::Constants, 0, 0);
    let mut probes = vec![x_ref.clone()];
    for i in 0..opts.points {
        let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm(&dir);
        if n == 0.0 {
            continue;
        }
        let r = if i % 2 == 0 {
            radius
        } else {
            radius * rng.random::<f64>().powf(1.0 / d as f64)
        };
        dir.iter_mut()
            .zip(x_ref.iter())
            .for_each(|(v, c)| *v = c + *v * r / n);
        probes.push(ParameterVector(dir));
    }

    let mut g_max: f64 = 0.0;
    let mut sigma_max: f64 = 0.0;
    for p in &probes {
        let (g, s) = gradient_spread(samples, p);
        g_max = g_max.max(g);
        sigma_max = sigma_max.max(s);
    }

    ProblemConstants::new(
        lipschitz,
        SAFETY_FACTOR * sigma_max,
        radius,
        SAFETY_FACTOR * g_max,
    )
}

/// `(max_k ‖∇f_k(x)‖, sqrt(mean_k ‖∇f_k(x) − ∇F(x)‖²))` at one point.
pub(crate) fn gradient_spread(samples: &[DataSample], x: &[f64]) -> (f64, f64) {
    let d = x.len();
    let m = samples.len() as f64;
    let scales: Vec<f64> = samples.iter().map(|s| 2.0 * s.residual(x)).collect();
    let mut mean = vec![0.0; d];
    let mut max_norm: f64 = 0.0;
    for (s, &scale) in samples.iter().zip(&scales) {
        max_norm = max_norm.max(scale.abs() * norm(&s.features));
        for (mi, bi) in mean.iter_mut().zip(&s.features) {
            *mi += scale * bi;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let sum_sq: f64 = samples
        .iter()
        .zip(&scales)
        .map(|(s, &scale)| {
            s.features
                .iter()
                .zip(&mean)
                .map(|(b, g)| (scale * b - g).powi(2))
                .sum::<f64>()
        })
        .sum();
    (max_norm, (sum_sq / m).sqrt())
}
