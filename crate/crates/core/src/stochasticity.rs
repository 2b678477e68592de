//! The stochasticity function `τ(t)` and its exact integrals in `λ`.
//!
//! Pieces are right-closed/left-open in `t`: a piece `(a, b]` owns its upper
//! edge, so a time exactly on a break takes the value of the piece that ends
//! there. In `λ` (decreasing in `t`) the same piece is `[λ(b), λ(a))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedules::{NoiseSchedule, TimeGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TauSchedule {
    Zero,
    Constant { value: f64 },
    /// `values[k]` holds on `(breaks[k-1], breaks[k]]`; `values[0]` below the
    /// first break and `values[n]` above the last one.
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
}

/// Constant-`τ` stretch of a `λ` interval, `lo < hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TauSegment {
    pub lo: f64,
    pub hi: f64,
    pub tau: f64,
}

impl TauSegment {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl TauSchedule {
    pub fn zero() -> Self {
        TauSchedule::Zero
    }

    pub fn constant(value: f64) -> Result<Self> {
        check_tau(value)?;
        Ok(TauSchedule::Constant { value })
    }

    pub fn piecewise(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::InvalidParams(format!(
                "piecewise tau needs breaks+1 values, got {} breaks and {} values",
                breaks.len(),
                values.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParams("tau breaks must be finite and strictly increasing".into()));
        }
        values.iter().try_for_each(|&v| check_tau(v))?;
        Ok(TauSchedule::Piecewise { breaks, values })
    }

    /// Builds `τ` from pieces `(σ_lo, σ_hi, value)` given in `σ^EDM = σ/α` units:
    /// `τ = value` for `t ∈ (t(σ_lo), t(σ_hi)]` and zero elsewhere. Bounds beyond
    /// the attainable `σ^EDM` range are clamped to the schedule domain.
    pub fn from_sigma_edm_pieces(schedule: &NoiseSchedule, pieces: &[(f64, f64, f64)]) -> Result<Self> {
        let (l_end, l_eps) = schedule.lambda_range();
        let to_time = |sigma_edm: f64| -> Result<f64> {
            if !(sigma_edm > 0.0) {
                return Err(Error::InvalidParams(format!("sigma_edm bound {sigma_edm} must be positive")));
            }
            let lam = -sigma_edm.ln();
            if lam >= l_eps {
                Ok(schedule.t_eps())
            } else if lam <= l_end {
                Ok(schedule.t_end())
            } else {
                schedule.lambda_inverse(lam)
            }
        };
        let mut intervals = pieces
            .iter()
            .map(|&(lo, hi, value)| {
                if !(lo < hi) {
                    return Err(Error::InvalidParams(format!("tau piece ({lo}, {hi}) is empty")));
                }
                check_tau(value)?;
                Ok((to_time(lo)?, to_time(hi)?, value))
            })
            .collect::<Result<Vec<_>>>()?;
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut breaks = Vec::new();
        let mut values = vec![0.0];
        for (k, &(a, b, value)) in intervals.iter().enumerate() {
            if k > 0 && a < intervals[k - 1].1 {
                return Err(Error::InvalidParams("tau pieces overlap".into()));
            }
            if breaks.last() == Some(&a) {
                // Adjacent to the previous piece; the zero gap has no width.
                values.pop();
            } else {
                breaks.push(a);
            }
            if a == b {
                values.push(0.0);
                continue;
            }
            values.push(value);
            breaks.push(b);
            values.push(0.0);
        }
        Self::piecewise(breaks, values)
    }

    /// `τ(t)` without a domain check.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TauSchedule::Zero => 0.0,
            TauSchedule::Constant { value } => *value,
            TauSchedule::Piecewise { breaks, values } => values[breaks.partition_point(|&b| b < t)],
        }
    }

    pub fn eval_checked(&self, schedule: &NoiseSchedule, t: f64) -> Result<f64> {
        schedule.check_time(t)?;
        Ok(self.eval(t))
    }

    /// Supremum of `τ` over the whole line.
    pub fn max_value(&self) -> f64 {
        match self {
            TauSchedule::Zero => 0.0,
            TauSchedule::Constant { value } => *value,
            TauSchedule::Piecewise { values, .. } => values.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Constant-`τ` stretches covering `[lambda_a, lambda_b]`, ascending in `λ`.
    /// Zero-width intervals yield no segments.
    pub fn segments(&self, schedule: &NoiseSchedule, lambda_a: f64, lambda_b: f64) -> Result<Vec<TauSegment>> {
        check_lambda_interval(schedule, lambda_a, lambda_b)?;
        if lambda_a == lambda_b {
            return Ok(Vec::new());
        }
        let (breaks, values) = match self {
            TauSchedule::Zero => return Ok(vec![TauSegment { lo: lambda_a, hi: lambda_b, tau: 0.0 }]),
            TauSchedule::Constant { value } => {
                return Ok(vec![TauSegment { lo: lambda_a, hi: lambda_b, tau: *value }])
            }
            TauSchedule::Piecewise { breaks, values } => (breaks, values),
        };
        // Walk the pieces from large t (small λ) to small t (large λ).
        let n = breaks.len();
        let mut out = Vec::new();
        let mut lo = f64::NEG_INFINITY;
        for k in (0..=n).rev() {
            let hi = if k == 0 { f64::INFINITY } else { schedule.lambda(breaks[k - 1]) };
            let (a, b) = (lo.max(lambda_a), hi.min(lambda_b));
            if a < b {
                out.push(TauSegment { lo: a, hi: b, tau: values[k] });
            }
            lo = hi;
        }
        Ok(out)
    }

    /// `∫_{λa}^{λb} τ² dλ`, exact for piecewise-constant `τ`.
    pub fn tau2_integral_lambda(&self, schedule: &NoiseSchedule, lambda_a: f64, lambda_b: f64) -> Result<f64> {
        Ok(self
            .segments(schedule, lambda_a, lambda_b)?
            .iter()
            .map(|s| s.tau * s.tau * s.width())
            .sum())
    }

    /// `Some(τ)` if `τ` takes a single value on `[lambda_a, lambda_b]`.
    pub fn constant_on(&self, schedule: &NoiseSchedule, lambda_a: f64, lambda_b: f64) -> Result<Option<f64>> {
        let segs = self.segments(schedule, lambda_a, lambda_b)?;
        let Some(first) = segs.first() else {
            return Ok(Some(self.eval(schedule.lambda_inverse(lambda_a)?)));
        };
        Ok(segs.iter().all(|s| s.tau == first.tau).then_some(first.tau))
    }
}

fn check_tau(value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("tau must be finite and >= 0, got {value}")))
    }
}

fn check_lambda_interval(schedule: &NoiseSchedule, lambda_a: f64, lambda_b: f64) -> Result<()> {
    let (lo, hi) = schedule.lambda_range();
    for v in [lambda_a, lambda_b] {
        if !(v >= lo && v <= hi) {
            return Err(Error::OutOfRange { value: v, lo, hi });
        }
    }
    if lambda_a > lambda_b {
        return Err(Error::OutOfRange { value: lambda_a, lo, hi: lambda_b });
    }
    Ok(())
}

/// DDIM posterior-noise scale `σ̂ = η·sqrt((1-α²_next)/(1-α²_i)·(1-α²_i/α²_next))`.
pub fn ddim_sigma_hat(eta: f64, schedule: &NoiseSchedule, t_i: f64, t_next: f64) -> f64 {
    let (a_i, a_n) = (schedule.alpha(t_i), schedule.alpha(t_next));
    let (s_i, s_n) = (schedule.sigma(t_i), schedule.sigma(t_next));
    let ratio = (a_i / a_n).powi(2);
    eta * ((s_n * s_n) / (s_i * s_i) * (1.0 - ratio)).sqrt()
}

/// The constant `τ` on `[t_next, t_i]` under which a 1-step predictor injects
/// exactly DDIM-η's noise.
pub fn tau_from_eta(eta: f64, schedule: &NoiseSchedule, t_i: f64, t_next: f64) -> Result<f64> {
    schedule.check_time(t_i)?;
    schedule.check_time(t_next)?;
    if !(eta >= 0.0) {
        return Err(Error::InvalidEta { eta, arg: f64::NAN });
    }
    let (a_i, a_n) = (schedule.alpha(t_i), schedule.alpha(t_next));
    let s_i = schedule.sigma(t_i);
    let h = schedule.lambda(t_next) - schedule.lambda(t_i);
    let arg = 1.0 - (eta * eta) / (s_i * s_i) * (1.0 - (a_i / a_n).powi(2));
    if !(arg > 0.0) {
        return Err(Error::InvalidEta { eta, arg });
    }
    if eta == 0.0 {
        return Ok(0.0);
    }
    Ok((arg.ln() / (-2.0 * h)).sqrt())
}

/// Piecewise `τ_η` with one piece per grid step, zero outside the grid.
pub fn ddim_equivalent_tau(eta: f64, schedule: &NoiseSchedule, grid: &TimeGrid) -> Result<TauSchedule> {
    let times = grid.times();
    let m = grid.steps();
    let breaks: Vec<f64> = times.iter().rev().copied().collect();
    let mut values = Vec::with_capacity(m + 2);
    values.push(0.0);
    for i in (0..m).rev() {
        values.push(tau_from_eta(eta, schedule, times[i], times[i + 1])?);
    }
    values.push(0.0);
    TauSchedule::piecewise(breaks, values)
}
