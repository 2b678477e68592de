//! Random scan of injected variances: data parameterization versus noise
//! parameterization of the same exact step.

use serde::Serialize;

use crate::coefficients::{data_param_variance, noise_param_variance};
use crate::error::{Error, Result};
use crate::rng::{NormalStream, Purpose};
use crate::schedules::NoiseSchedule;
use crate::stochasticity::TauSchedule;

pub const SLACK: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct InequalityTuple {
    pub schedule: String,
    pub lambda_i: f64,
    pub lambda_next: f64,
    pub tau: String,
    pub data_variance: f64,
    pub noise_variance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub n: usize,
    pub violations: usize,
    /// Smallest `noise − data` seen.
    pub min_margin: f64,
    pub tuples: Vec<InequalityTuple>,
    pub pass: bool,
}

/// Draws `n` random `(schedule, λ interval, τ)` tuples and checks
/// `σ̃² ≤ α² ∫ 2e^{−2λ} τ² dλ` on each. `τ` is constant on half of the
/// tuples and has a break inside the step on the other half.
pub fn variance_inequality_scan(schedules: &[NoiseSchedule], n: usize, max_tau: f64, seed: u64) -> Result<InequalityReport> {
    if schedules.is_empty() || !(max_tau >= 0.0) {
        return Err(Error::InvalidParams("scan needs schedules and max_tau >= 0".into()));
    }
    let mut tuples = Vec::with_capacity(n);
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for k in 0..n as u64 {
        let mut u = NormalStream::new(seed, Purpose::Scan, k, 1);
        let s = &schedules[((u.uniform_at(0) * schedules.len() as f64) as usize).min(schedules.len() - 1)];
        let (lo, hi) = s.lambda_range();
        let a = lo + (hi - lo) * u.uniform_at(1);
        let b = a + (hi - a) * u.uniform_at(2).max(1e-3);
        let (t_i, t_next) = (s.lambda_inverse(a)?, s.lambda_inverse(b)?);
        let tau = if k % 2 == 0 {
            TauSchedule::constant(max_tau * u.uniform_at(3))?
        } else {
            let brk = 0.5 * (t_i + t_next);
            TauSchedule::piecewise(vec![brk], vec![max_tau * u.uniform_at(3), max_tau * u.uniform_at(4)])?
        };
        if !(t_next < t_i) {
            continue;
        }
        let d = data_param_variance(s, &tau, t_i, t_next)?;
        let v = noise_param_variance(s, &tau, t_i, t_next)?;
        if d > v + SLACK * v.max(1.0) {
            violations += 1;
        }
        min_margin = min_margin.min(v - d);
        tuples.push(InequalityTuple {
            schedule: s.kind().name().to_string(),
            lambda_i: a,
            lambda_next: b,
            tau: serde_json::to_string(&tau).unwrap_or_default(),
            data_variance: d,
            noise_variance: v,
        });
    }
    Ok(InequalityReport { n: tuples.len(), violations, min_margin, tuples, pass: violations == 0 })
}
