//! Data-prediction models `x_θ(x, t)` with exact answers.
//!
//! A Gaussian mixture prior pushed through `x_t = α x_0 + σ ε` stays a
//! Gaussian mixture, so its posterior mean `E[x_0 | x_t]`, score and
//! marginal CDF are all available in closed form.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::{NormalStream, Purpose};
use crate::schedules::NoiseSchedule;

/// A model of `E[x_0 | x_t = x]`.
pub trait DataPredictionModel: Sync {
    fn dim(&self) -> usize;

    /// Writes `x_θ(x, t)` into `out`. Both slices have length `dim()`.
    fn predict(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// True if `x ↦ x_θ(x, t)` is affine for every `t`.
    fn is_affine(&self) -> bool {
        false
    }
}

/// Isotropic Gaussian mixture `Σ_k w_k N(μ_k, v_k I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::InvalidParams(format!(
                "mixture needs matching non-empty weights/means/variances, got {}/{}/{}",
                k,
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidParams("mixture dimension must be positive".into()));
        }
        if let Some(m) = means.iter().find(|m| m.len() != dim) {
            return Err(Error::DimensionError { expected: dim, got: m.len() });
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParams("mixture weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!("mixture weights sum to {total}, not 1")));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams("mixture variances must be positive".into()));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParams("mixture means must be finite".into()));
        }
        Ok(Self { weights, means, variances })
    }

    /// Single Gaussian `N(mean, variance I)`.
    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Posterior responsibilities of each component given `x_t = x`.
    fn responsibilities(&self, alpha: f64, sigma: f64, x: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let mut logits: Vec<f64> = (0..self.components())
            .map(|k| {
                let m = alpha * alpha * self.variances[k] + sigma * sigma;
                let sq: f64 = x.iter().zip(&self.means[k]).map(|(xi, mu)| (xi - alpha * mu).powi(2)).sum();
                self.weights[k].ln() - 0.5 * d * (TAU * m).ln() - 0.5 * sq / m
            })
            .collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in &mut logits {
            *l = (*l - top).exp();
            total += *l;
        }
        logits.iter_mut().for_each(|l| *l /= total);
        logits
    }

    fn posterior_mean(&self, alpha: f64, sigma: f64, x: &[f64], out: &mut [f64]) {
        let s2 = sigma * sigma;
        if self.components() == 1 {
            let v = self.variances[0];
            let m = alpha * alpha * v + s2;
            for ((o, xi), mu) in out.iter_mut().zip(x).zip(&self.means[0]) {
                *o = (xi * alpha * v + s2 * mu) / m;
            }
            return;
        }
        let r = self.responsibilities(alpha, sigma, x);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, rk) in r.iter().enumerate() {
            let v = self.variances[k];
            let m = alpha * alpha * v + s2;
            for ((o, xi), mu) in out.iter_mut().zip(x).zip(&self.means[k]) {
                *o += rk * (xi * alpha * v + s2 * mu) / m;
            }
        }
    }

    /// Draws `n` samples of `x_0`; sample `i` only depends on `(seed, i)`.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let cum: Vec<f64> = self
            .weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        (0..n)
            .map(|i| {
                let mut stream = NormalStream::new(seed, Purpose::DataSample, i as u64, d);
                let u = stream.uniform_at(0);
                let k = cum.iter().position(|&c| u < c).unwrap_or(self.components() - 1);
                // Normals come from block 1; uniforms live at the start of the stream.
                let z = stream.block(1);
                let sd = self.variances[k].sqrt();
                z.iter().zip(&self.means[k]).map(|(zi, mu)| mu + sd * zi).collect()
            })
            .collect()
    }
}

/// Exact `x_θ` for a Gaussian-mixture prior under a schedule.
#[derive(Clone, Debug)]
pub struct GmmModel {
    mixture: GaussianMixture,
    schedule: NoiseSchedule,
}

impl GmmModel {
    pub fn new(mixture: GaussianMixture, schedule: NoiseSchedule) -> Self {
        Self { mixture, schedule }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// `∇ log p_t(x)`.
    pub fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.schedule.check_time(t)?;
        self.check_dim(x)?;
        let (alpha, sigma) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let g = &self.mixture;
        let r = g.responsibilities(alpha, sigma, x);
        let mut out = vec![0.0; x.len()];
        for (k, rk) in r.iter().enumerate() {
            let m = alpha * alpha * g.variances[k] + sigma * sigma;
            for ((o, xi), mu) in out.iter_mut().zip(x).zip(&g.means[k]) {
                *o -= rk * (xi - alpha * mu) / m;
            }
        }
        Ok(out)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.mixture.dim() {
            return Err(Error::DimensionError { expected: self.mixture.dim(), got: x.len() });
        }
        Ok(())
    }

    fn check_scalar(&self) -> Result<()> {
        if self.mixture.dim() != 1 {
            return Err(Error::DimensionError { expected: 1, got: self.mixture.dim() });
        }
        Ok(())
    }

    /// CDF of the 1-D marginal `p_t` at `x`.
    pub fn exact_marginal_cdf(&self, t: f64, x: f64) -> Result<f64> {
        self.check_scalar()?;
        self.schedule.check_time(t)?;
        Ok(self.marginal_cdf_unchecked(t, x))
    }

    fn marginal_cdf_unchecked(&self, t: f64, x: f64) -> f64 {
        let (alpha, sigma) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let g = &self.mixture;
        (0..g.components())
            .map(|k| {
                let sd = (alpha * alpha * g.variances[k] + sigma * sigma).sqrt();
                g.weights[k] * normal_cdf((x - alpha * g.means[k][0]) / sd)
            })
            .sum()
    }

    /// Quantile of the 1-D marginal `p_t`, by bisection.
    pub fn marginal_quantile(&self, t: f64, p: f64) -> Result<f64> {
        self.check_scalar()?;
        self.schedule.check_time(t)?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::OutOfRange { value: p, lo: 0.0, hi: 1.0 });
        }
        let (alpha, sigma) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let g = &self.mixture;
        let spread = (0..g.components())
            .map(|k| (alpha * alpha * g.variances[k] + sigma * sigma).sqrt())
            .fold(0.0, f64::max);
        let centers = g.means.iter().map(|m| alpha * m[0]);
        let mut lo = centers.clone().fold(f64::INFINITY, f64::min) - 40.0 * spread;
        let mut hi = centers.fold(f64::NEG_INFINITY, f64::max) + 40.0 * spread;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.marginal_cdf_unchecked(t, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Mean and variance of the 1-D marginal `p_t`.
    pub fn marginal_moments(&self, t: f64) -> Result<(f64, f64)> {
        self.check_scalar()?;
        self.schedule.check_time(t)?;
        let (alpha, sigma) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let g = &self.mixture;
        let mean: f64 = (0..g.components()).map(|k| g.weights[k] * alpha * g.means[k][0]).sum();
        let second: f64 = (0..g.components())
            .map(|k| {
                let m = alpha * g.means[k][0];
                g.weights[k] * (m * m + alpha * alpha * g.variances[k] + sigma * sigma)
            })
            .sum();
        Ok((mean, second - mean * mean))
    }
}

impl DataPredictionModel for GmmModel {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn predict(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let (alpha, sigma) = self.schedule.alpha_sigma(t);
        self.mixture.posterior_mean(alpha, sigma, x, out);
    }

    fn is_affine(&self) -> bool {
        self.mixture.components() == 1
    }
}

/// Checked posterior mean `E[x_0 | x_t = x]`.
pub fn data_predict_gmm(mixture: &GaussianMixture, schedule: &NoiseSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
    schedule.check_time(t)?;
    if x.len() != mixture.dim() {
        return Err(Error::DimensionError { expected: mixture.dim(), got: x.len() });
    }
    let mut out = vec![0.0; x.len()];
    mixture.posterior_mean(schedule.alpha(t), schedule.sigma(t), x, &mut out);
    Ok(out)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// A model whose implied score is shifted by `ε·u(x)`, with
/// `u_d(x) = sin(ω_d x_d + φ_d)`.
#[derive(Clone, Debug)]
pub struct PerturbedModel<M> {
    base: M,
    schedule: NoiseSchedule,
    epsilon: f64,
    omega: Vec<f64>,
    phi: Vec<f64>,
}

pub fn perturb_model<M: DataPredictionModel>(base: M, schedule: NoiseSchedule, epsilon: f64, seed: u64) -> Result<PerturbedModel<M>> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParams(format!("perturbation epsilon must be >= 0, got {epsilon}")));
    }
    let d = base.dim();
    let mut stream = NormalStream::new(seed, Purpose::Perturbation, 0, d);
    let omega = stream.block(1).iter().map(|z| 1.0 + 0.5 * z.abs()).collect();
    let phi = (0..d as u64).map(|k| TAU * stream.uniform_at(k)).collect();
    Ok(PerturbedModel { base, schedule, epsilon, omega, phi })
}

impl<M> PerturbedModel<M> {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn base(&self) -> &M {
        &self.base
    }

    /// The score offset field `u(x)`.
    pub fn field(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.omega).zip(&self.phi).map(|((xi, w), p)| (w * xi + p).sin()).collect()
    }
}

impl<M: DataPredictionModel> DataPredictionModel for PerturbedModel<M> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn predict(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.base.predict(x, t, out);
        if self.epsilon == 0.0 {
            return;
        }
        // x_θ = (x + σ² s)/α, so s → s + εu shifts x_θ by εσ²u/α.
        let scale = self.epsilon * self.schedule.sigma(t).powi(2) / self.schedule.alpha(t);
        for ((o, xi), (w, p)) in out.iter_mut().zip(x).zip(self.omega.iter().zip(&self.phi)) {
            *o += scale * (w * xi + p).sin();
        }
    }

    fn is_affine(&self) -> bool {
        self.epsilon == 0.0 && self.base.is_affine()
    }
}
