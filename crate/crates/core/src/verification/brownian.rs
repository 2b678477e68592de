//! Fine-grid Brownian paths and the Itô noise they induce on coarse steps.
//!
//! The injected noise of a step `t_i → t_n` is
//! `σ_n ∫ e^{-∫_{λ(u)}^{λ_n} τ²} τ(u) sqrt(-2 λ'(u)) dw̄_u`. On a fine grid it
//! becomes `σ_n Σ_k w_k ΔW_k` with the integrand evaluated at each fine
//! interval's midpoint. An interval that straddles a `τ` break gets the
//! root-mean-square of the integrand instead, which keeps its variance exact.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{NormalStream, Purpose};
use crate::schedules::{NoiseSchedule, TimeGrid};
use crate::stochasticity::TauSchedule;
use crate::verification::stats::variance_with_se;

/// A Wiener path on a fine time grid, generated lazily per sample.
#[derive(Clone, Debug)]
pub struct BrownianPath {
    times: Vec<f64>,
    seed: u64,
    dim: usize,
}

impl BrownianPath {
    pub fn new(fine: &TimeGrid, seed: u64, dim: usize) -> Self {
        Self { times: fine.times().to_vec(), seed, dim }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    /// Increment over fine interval `k`, i.e. `[t_{k+1}, t_k]`.
    pub fn increment(&self, sample: u64, k: usize) -> Vec<f64> {
        let mut s = NormalStream::new(self.seed, Purpose::Brownian, sample, self.dim);
        self.scaled_block(&mut s, k)
    }

    fn scaled_block(&self, s: &mut NormalStream, k: usize) -> Vec<f64> {
        let sd = (self.times[k] - self.times[k + 1]).sqrt();
        s.block(k as u64).into_iter().map(|z| sd * z).collect()
    }

    /// All increments of one sample, interval-major.
    pub fn increments(&self, sample: u64) -> Vec<Vec<f64>> {
        let mut s = NormalStream::new(self.seed, Purpose::Brownian, sample, self.dim);
        (0..self.intervals()).map(|k| self.scaled_block(&mut s, k)).collect()
    }

    /// Index of the fine node equal to `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&u| u > t);
        (k < self.times.len() && self.times[k] == t).then_some(k)
    }

    /// Fine-interval index range covering `[t_next, t_i]`.
    pub fn span(&self, t_i: f64, t_next: f64) -> Result<(usize, usize)> {
        match (self.index_of(t_i), self.index_of(t_next)) {
            (Some(a), Some(b)) if a < b => Ok((a, b)),
            _ => Err(Error::PathCoverage { t_i, t_next }),
        }
    }
}

/// Weights `w_k` (without the `σ_n` factor) for fine intervals `a..b`
/// of a step ending at `λ_n = λ(times[b])`.
pub fn ito_weights(schedule: &NoiseSchedule, tau: &TauSchedule, times: &[f64], a: usize, b: usize) -> Result<Vec<f64>> {
    let lambda_n = schedule.lambda(times[b]);
    (a..b)
        .map(|k| {
            let (u_hi, u_lo) = (times[k], times[k + 1]);
            let (l_lo, l_hi) = (schedule.lambda(u_hi), schedule.lambda(u_lo));
            match tau.constant_on(schedule, l_lo, l_hi)? {
                Some(tv) => {
                    if tv == 0.0 {
                        return Ok(0.0);
                    }
                    let u_mid = 0.5 * (u_hi + u_lo);
                    let l_mid = schedule.lambda(u_mid);
                    let tail = tau.tau2_integral_lambda(schedule, l_mid.min(lambda_n), lambda_n)?;
                    Ok((-tail).exp() * tv * (-2.0 * schedule.dlambda_dt(u_mid)).sqrt())
                }
                None => {
                    // Σ over pieces of ∫ e^{-2E(λ)} 2τ² dλ = e^{-2E(hi)}(1 - e^{-2τ²Δλ}).
                    let mut total = 0.0;
                    for seg in tau.segments(schedule, l_lo, l_hi)? {
                        let tail = tau.tau2_integral_lambda(schedule, seg.hi, lambda_n)?;
                        total += (-2.0 * tail).exp() * -(-2.0 * seg.tau * seg.tau * seg.width()).exp_m1();
                    }
                    Ok((total / (u_hi - u_lo)).sqrt())
                }
            }
        })
        .collect()
}

/// Coupled injected noise for the step `t_i → t_next` of one sample.
pub fn ito_noise_from_path(
    path: &BrownianPath,
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    t_i: f64,
    t_next: f64,
    sample: u64,
) -> Result<Vec<f64>> {
    let (a, b) = path.span(t_i, t_next)?;
    let weights = ito_weights(schedule, tau, path.times(), a, b)?;
    let sigma_n = schedule.sigma(t_next);
    let mut out = vec![0.0; path.dim()];
    let mut s = NormalStream::new(path.seed, Purpose::Brownian, sample, path.dim);
    for (k, w) in (a..b).zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        let dw = path.scaled_block(&mut s, k);
        out.iter_mut().zip(&dw).for_each(|(o, d)| *o += sigma_n * w * d);
    }
    Ok(out)
}

/// Monte-Carlo variance of the coupled noise against `σ̃²`.
#[derive(Clone, Debug, Serialize)]
pub struct VarianceCheck {
    pub t_i: f64,
    pub t_next: f64,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub standard_error: f64,
    pub z_score: f64,
    pub pass: bool,
}

/// Samples the coupled noise of one step over `n_paths` independent 1-D
/// paths on a `2^level` fine subdivision and compares its variance with
/// the closed form.
pub fn ito_variance_check(
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    t_i: f64,
    t_next: f64,
    level: u32,
    n_paths: usize,
    seed: u64,
) -> Result<VarianceCheck> {
    use rayon::prelude::*;
    let step = TimeGrid::from_times(schedule, vec![t_i, t_next])?;
    let fine = step.refine_dyadic(schedule, level)?;
    let path = BrownianPath::new(&fine, seed, 1);
    let (a, b) = path.span(t_i, t_next)?;
    let weights = ito_weights(schedule, tau, path.times(), a, b)?;
    let sigma_n = schedule.sigma(t_next);
    let draws: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut s = NormalStream::new(seed, Purpose::Brownian, p, 1);
            (a..b).zip(&weights).map(|(k, w)| sigma_n * w * path.scaled_block(&mut s, k)[0]).sum()
        })
        .collect();
    let (_, var, se) = variance_with_se(&draws);
    let closed_form = crate::coefficients::noise_std(schedule, tau, t_i, t_next)?.powi(2);
    let z_score = if se > 0.0 { (var - closed_form) / se } else { 0.0 };
    Ok(VarianceCheck { t_i, t_next, closed_form, monte_carlo: var, standard_error: se, z_score, pass: z_score.abs() <= 3.0 })
}
