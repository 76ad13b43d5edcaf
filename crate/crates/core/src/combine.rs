//! Master-side fusion: combining weights, waiting deadline and the idle-work blend.

use std::time::Duration;

use crate::error::{AtgError, Result};
use crate::problem::ParameterVector;
use crate::worker::WorkerReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CombineRule {
    /// `λ_v ∝ q_v`, the variance-optimal choice.
    #[default]
    Proportional,
    Uniform,
    /// Keep the `N − B` earliest finishers, uniformly weighted.
    FastestK {
        b: usize,
    },
    /// All weight on the worker with the most steps.
    SingleFastest,
}

impl CombineRule {
    pub fn validate(&self, n_workers: usize) -> Result<()> {
        match *self {
            CombineRule::FastestK { b } if b >= n_workers => Err(AtgError::invalid(format!(
                "fastest_k needs B < N, got B={b}, N={n_workers}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Weights aligned with `reports`; they sum to one.
pub fn combine_weights(reports: &[WorkerReport], rule: CombineRule) -> Result<Vec<f64>> {
    combine_weights_for(reports, rule, reports.len())
}

/// As [`combine_weights`], but `FastestK` keeps `n_workers − B` reports, where
/// `n_workers` counts every worker in the system rather than just those received.
pub fn combine_weights_for(
    reports: &[WorkerReport],
    rule: CombineRule,
    n_workers: usize,
) -> Result<Vec<f64>> {
    let n = reports.len();
    if n == 0 {
        return Err(AtgError::invalid("cannot combine an empty set of reports"));
    }
    rule.validate(n_workers.max(n))?;
    let uniform = vec![1.0 / n as f64; n];
    let weights = match rule {
        CombineRule::Uniform => uniform,
        CombineRule::Proportional => {
            let total: u64 = reports.iter().map(|r| r.q).sum();
            if total == 0 {
                log::warn!("all received workers report q = 0; using uniform weights");
                uniform
            } else {
                let total = total as f64;
                reports.iter().map(|r| r.q as f64 / total).collect()
            }
        }
        CombineRule::FastestK { b } => {
            let keep = n_workers.saturating_sub(b).clamp(1, n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| (reports[i].finish_time, reports[i].worker));
            let mut w = vec![0.0; n];
            for &i in &order[..keep] {
                w[i] = 1.0 / keep as f64;
            }
            w
        }
        CombineRule::SingleFastest => {
            let best = (0..n)
                .max_by_key(|&i| (reports[i].q, std::cmp::Reverse(reports[i].worker)))
                .expect("nonempty");
            let mut w = vec![0.0; n];
            w[best] = 1.0;
            w
        }
    };
    Ok(weights)
}

/// `Σ λ_v x_v` over the reports' output iterates.
pub fn fuse(reports: &[WorkerReport], weights: &[f64]) -> Result<ParameterVector> {
    let first = reports
        .first()
        .ok_or_else(|| AtgError::invalid("cannot fuse an empty set of reports"))?;
    if weights.len() != reports.len() {
        return Err(AtgError::DimensionMismatch {
            expected: reports.len(),
            actual: weights.len(),
        });
    }
    let d = first.iterate.len();
    let mut x = vec![0.0; d];
    for (r, &w) in reports.iter().zip(weights) {
        if r.iterate.len() != d {
            return Err(AtgError::DimensionMismatch {
                expected: d,
                actual: r.iterate.len(),
            });
        }
        if w == 0.0 {
            continue;
        }
        x.iter_mut()
            .zip(r.iterate.iter())
            .for_each(|(a, b)| *a += w * b);
    }
    ParameterVector::new(x).map_err(|_| AtgError::NonFinite("fused iterate"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub x: ParameterVector,
    /// One weight per worker id in `0..n_workers`.
    pub weights: Vec<f64>,
    pub total_q: u64,
}

/// Weights and fuses reports that already passed the deadline and, for
/// `FastestK`, the earliest-arrival selection (so they are weighted uniformly).
pub fn fuse_selected(
    reports: &[WorkerReport],
    rule: CombineRule,
    n_workers: usize,
) -> Result<Fusion> {
    let rule = match rule {
        CombineRule::FastestK { .. } => CombineRule::Uniform,
        r => r,
    };
    let w = combine_weights(reports, rule)?;
    let x = fuse(reports, &w)?;
    let mut weights = vec![0.0; n_workers];
    for (r, wv) in reports.iter().zip(w) {
        let slot = weights.get_mut(r.worker).ok_or(AtgError::InvalidWorker {
            index: r.worker,
            workers: n_workers,
        })?;
        *slot = wv;
    }
    Ok(Fusion {
        x,
        weights,
        total_q: reports.iter().map(|r| r.q).sum(),
    })
}

/// When a worker's update reached the master, measured from the moment the
/// master started waiting. `None` means it never arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arrival {
    pub worker: usize,
    pub wait: Option<Duration>,
}

/// Workers heard from within `t_c` (`None` means wait for every responsive
/// worker), in input order. An empty result marks a failed epoch.
pub fn apply_waiting_deadline(arrivals: &[Arrival], t_c: Option<Duration>) -> Vec<usize> {
    arrivals
        .iter()
        .filter(|a| match (a.wait, t_c) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(w), Some(limit)) => w <= limit,
        })
        .map(|a| a.worker)
        .collect()
}

/// Weight on the master iterate for a worker that did `q_bar` idle steps while
/// the received workers did `q_total` in the epoch.
pub fn blend_weight(q_total: u64, q_bar: u64) -> Result<f64> {
    if q_total == 0 {
        return Err(AtgError::invalid("blend needs a positive total step count"));
    }
    Ok(q_total as f64 / (q_bar + q_total) as f64)
}

/// `λ x_master + (1 − λ) x̄_v` with `λ = Q / (q̄_v + Q)`.
pub fn generalized_blend(
    x_master: &ParameterVector,
    x_bar: &ParameterVector,
    q_total: u64,
    q_bar: u64,
) -> Result<ParameterVector> {
    if x_master.len() != x_bar.len() {
        return Err(AtgError::DimensionMismatch {
            expected: x_master.len(),
            actual: x_bar.len(),
        });
    }
    let lambda = blend_weight(q_total, q_bar)?;
    if lambda == 1.0 {
        return Ok(x_master.clone());
    }
    let x = x_master
        .iter()
        .zip(x_bar.iter())
        .map(|(m, b)| lambda * m + (1.0 - lambda) * b)
        .collect();
    ParameterVector::new(x).map_err(|_| AtgError::NonFinite("blended iterate"))
}
