//! Per-step coefficients of the stochastic Adams predictor and corrector.
//!
//! A step from `t_i` to `t_{i+1}` (so `λ_i < λ_{i+1}`) reads
//!
//! ```text
//! x_{i+1} = state_decay · x_i + Σ_j w_j · x_θ(node_j) + noise_std · ξ
//! ```
//!
//! where `w_j = σ_{i+1} ∫ e^{-∫_λ^{λ_{i+1}} τ²} (1 + τ²(λ)) e^λ l_j(λ) dλ` and
//! `l_j` are the Lagrange basis polynomials on the step's `λ` nodes.

use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedules::{NoiseSchedule, TimeGrid};
use crate::stochasticity::TauSchedule;

pub const DEFAULT_QUADRATURE_ORDER: usize = 32;
const NODE_TOLERANCE: f64 = 1e-14;
const GRID_NODE_TOLERANCE: f64 = 1e-12;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_legendre(order: usize) -> Result<Self> {
        let n = NonZeroUsize::new(order).ok_or_else(|| Error::InvalidParams("quadrature order must be positive".into()))?;
        let (nodes, weights) = GaussLegendre::new(n).into_node_weight_pairs().iter().copied().unzip();
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let (half, mid) = (0.5 * (b - a), 0.5 * (a + b));
        half * self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_legendre(DEFAULT_QUADRATURE_ORDER).expect("positive order")
    }
}

fn check_nodes(lambdas: &[f64], tol: f64) -> Result<()> {
    for (j, a) in lambdas.iter().enumerate() {
        for b in &lambdas[j + 1..] {
            if (a - b).abs() < tol {
                return Err(Error::DegenerateNodes { a: *a, b: *b });
            }
        }
    }
    Ok(())
}

/// `l_j(λ) = Π_{k≠j} (λ − λ_k)/(λ_j − λ_k)`.
pub fn lagrange_basis(lambdas: &[f64], j: usize, lambda: f64) -> Result<f64> {
    if j >= lambdas.len() {
        return Err(Error::InvalidParams(format!("basis index {j} out of {} nodes", lambdas.len())));
    }
    check_nodes(lambdas, NODE_TOLERANCE)?;
    Ok(basis_unchecked(lambdas, j, lambda))
}

fn basis_unchecked(lambdas: &[f64], j: usize, lambda: f64) -> f64 {
    let lj = lambdas[j];
    lambdas
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(_, &lk)| (lambda - lk) / (lj - lk))
        .product()
}

/// How coefficients are obtained; see [`step_coefficients`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoeffMode {
    #[default]
    Auto,
    Quadrature,
    ClosedForm,
}

impl CoeffMode {
    pub fn name(self) -> &'static str {
        match self {
            CoeffMode::Auto => "auto",
            CoeffMode::Quadrature => "quadrature",
            CoeffMode::ClosedForm => "closed_form",
        }
    }
}

impl FromStr for CoeffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "auto" => Ok(CoeffMode::Auto),
            "quadrature" => Ok(CoeffMode::Quadrature),
            "closed_form" => Ok(CoeffMode::ClosedForm),
            _ => Err(Error::InvalidParams(format!("unknown coefficient mode '{s}'"))),
        }
    }
}

/// Which formula produced a set of coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoeffSource {
    Quadrature,
    ClosedForm,
}

impl fmt::Display for CoeffSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoeffSource::Quadrature => "quadrature",
            CoeffSource::ClosedForm => "closed_form",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Predictor,
    Corrector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepCoefficients {
    pub state_decay: f64,
    /// Newest evaluation first: `[b_i, b_{i-1}, …]` for the predictor and
    /// `[b̂_{i+1}, b̂_i, …]` for the corrector.
    pub model_weights: Vec<f64>,
    pub noise_std: f64,
    /// `∫ τ² dλ` over the step.
    pub tau2_integral: f64,
    pub mode: CoeffSource,
}

impl StepCoefficients {
    pub fn order(&self) -> usize {
        self.model_weights.len()
    }
}

/// `∫_{λa}^{λb} w(λ) l_j(λ) dλ` for each node, with
/// `w(λ) = σ(λb) e^λ e^{-∫_λ^{λb} τ²} (1 + τ²(λ))`.
///
/// The step is split at `τ` breaks so every quadrature panel has a smooth
/// integrand.
pub fn weighted_lagrange_integrals(
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    lambda_a: f64,
    lambda_b: f64,
    nodes: &[f64],
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    check_nodes(nodes, NODE_TOLERANCE)?;
    let segments = tau.segments(schedule, lambda_a, lambda_b)?;
    let alpha_b = schedule.alpha(schedule.lambda_inverse(lambda_b)?);
    let mut out = vec![0.0; nodes.len()];
    // Remaining exponent ∫_{hi}^{λb} τ², accumulated from the right.
    let mut tail = 0.0;
    for seg in segments.iter().rev() {
        let tau2 = seg.tau * seg.tau;
        for (j, o) in out.iter_mut().enumerate() {
            *o += rule.integrate(seg.lo, seg.hi, |lam| {
                let exponent = lam - lambda_b - tail - tau2 * (seg.hi - lam);
                alpha_b * exponent.exp() * (1.0 + tau2) * basis_unchecked(nodes, j, lam)
            });
        }
        tail += tau2 * seg.width();
    }
    Ok(out)
}

fn step_times(grid: &TimeGrid, i: usize) -> Result<(f64, f64)> {
    let times = grid.times();
    if i + 1 >= times.len() {
        return Err(Error::InvalidParams(format!("step {i} is past the last grid step {}", grid.steps())));
    }
    Ok((times[i], times[i + 1]))
}

fn check_history(i: usize, steps: usize) -> Result<()> {
    if steps == 0 || i + 1 < steps {
        return Err(Error::InsufficientHistory { step: i, needed: steps.max(1), available: i + 1 });
    }
    Ok(())
}

/// Interpolation nodes in `λ`, newest first.
fn step_nodes(schedule: &NoiseSchedule, grid: &TimeGrid, i: usize, steps: usize, kind: StepKind) -> Result<Vec<f64>> {
    check_history(i, steps)?;
    let times = grid.times();
    let mut nodes = Vec::with_capacity(steps + 1);
    if kind == StepKind::Corrector {
        nodes.push(schedule.lambda(times[i + 1]));
    }
    nodes.extend((0..steps).map(|j| schedule.lambda(times[i - j])));
    check_nodes(&nodes, GRID_NODE_TOLERANCE)?;
    Ok(nodes)
}

fn decay_and_noise(schedule: &NoiseSchedule, tau: &TauSchedule, t_i: f64, t_next: f64) -> Result<(f64, f64, f64)> {
    let integral = tau.tau2_integral_lambda(schedule, schedule.lambda(t_i), schedule.lambda(t_next))?;
    let sigma_next = schedule.sigma(t_next);
    let decay = sigma_next / schedule.sigma(t_i) * (-integral).exp();
    Ok((decay, sigma_next * (-(-2.0 * integral).exp_m1()).sqrt(), integral))
}

fn quadrature_coefficients(
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    grid: &TimeGrid,
    i: usize,
    steps: usize,
    kind: StepKind,
    rule: &QuadratureRule,
) -> Result<StepCoefficients> {
    let (t_i, t_next) = step_times(grid, i)?;
    let nodes = step_nodes(schedule, grid, i, steps, kind)?;
    let (la, lb) = (schedule.lambda(t_i), schedule.lambda(t_next));
    let model_weights = weighted_lagrange_integrals(schedule, tau, la, lb, &nodes, rule)?;
    let (state_decay, noise_std, tau2_integral) = decay_and_noise(schedule, tau, t_i, t_next)?;
    Ok(StepCoefficients { state_decay, model_weights, noise_std, tau2_integral, mode: CoeffSource::Quadrature })
}

/// `s`-step predictor coefficients for the step `t_i → t_{i+1}`.
pub fn predictor_coefficients(
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    grid: &TimeGrid,
    i: usize,
    steps: usize,
    rule: &QuadratureRule,
) -> Result<StepCoefficients> {
    quadrature_coefficients(schedule, tau, grid, i, steps, StepKind::Predictor, rule)
}

/// `ŝ`-step corrector coefficients; `steps + 1` weights including `t_{i+1}`.
pub fn corrector_coefficients(
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    grid: &TimeGrid,
    i: usize,
    steps: usize,
    rule: &QuadratureRule,
) -> Result<StepCoefficients> {
    quadrature_coefficients(schedule, tau, grid, i, steps, StepKind::Corrector, rule)
}

/// `σ̃ = σ_{t_next} sqrt(1 − e^{−2∫τ²dλ})`.
pub fn noise_std(schedule: &NoiseSchedule, tau: &TauSchedule, t_i: f64, t_next: f64) -> Result<f64> {
    check_reverse_step(schedule, t_i, t_next)?;
    Ok(decay_and_noise(schedule, tau, t_i, t_next)?.1)
}

fn check_reverse_step(schedule: &NoiseSchedule, t_i: f64, t_next: f64) -> Result<()> {
    schedule.check_time(t_i)?;
    schedule.check_time(t_next)?;
    if !(t_next < t_i) {
        let (lo, _) = schedule.domain();
        return Err(Error::OutOfDomain { t: t_next, lo, hi: t_i });
    }
    Ok(())
}

/// `α(1 − e^{−(1+τ²)h})`: the total model weight of a constant-`τ` step.
fn total_weight(alpha_next: f64, tau: f64, h: f64) -> f64 {
    alpha_next * -(-(1.0 + tau * tau) * h).exp_m1()
}

fn constant_tau_on_step(schedule: &NoiseSchedule, tau: &TauSchedule, t_i: f64, t_next: f64) -> Result<f64> {
    tau.constant_on(schedule, schedule.lambda(t_i), schedule.lambda(t_next))?
        .ok_or(Error::NonConstantTau { t_i, t_next })
}

/// Simplified 2-step predictor and 1-step corrector for constant `τ`.
///
/// Both keep the exact total weight and truncate the interpolation
/// correction at leading order in `h`.
pub fn closed_form_2p1c(
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    grid: &TimeGrid,
    i: usize,
) -> Result<(StepCoefficients, StepCoefficients)> {
    check_history(i, 2)?;
    Ok((closed_form(schedule, tau, grid, i, 2, StepKind::Predictor)?, closed_form(schedule, tau, grid, i, 1, StepKind::Corrector)?))
}

fn closed_form(
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    grid: &TimeGrid,
    i: usize,
    steps: usize,
    kind: StepKind,
) -> Result<StepCoefficients> {
    let (t_i, t_next) = step_times(grid, i)?;
    let nodes = step_nodes(schedule, grid, i, steps, kind)?;
    let tau_c = constant_tau_on_step(schedule, tau, t_i, t_next)?;
    let c = 1.0 + tau_c * tau_c;
    let (l_i, l_next) = (schedule.lambda(t_i), schedule.lambda(t_next));
    let h = l_next - l_i;
    let alpha = schedule.alpha(t_next);
    let total = total_weight(alpha, tau_c, h);
    let model_weights = match (kind, steps) {
        (StepKind::Predictor, 1) => vec![total],
        (StepKind::Predictor, 2) => {
            let r = l_i - nodes[1];
            let older = -alpha * c * h * h / (2.0 * r);
            vec![total - older, older]
        }
        (StepKind::Corrector, 1) => {
            let newest = alpha * c * h / 2.0;
            vec![newest, total - newest]
        }
        _ => {
            return Err(Error::InvalidParams(format!(
                "no closed form for a {steps}-step {}",
                if kind == StepKind::Predictor { "predictor" } else { "corrector" }
            )))
        }
    };
    let (state_decay, noise_std, tau2_integral) = decay_and_noise(schedule, tau, t_i, t_next)?;
    Ok(StepCoefficients { state_decay, model_weights, noise_std, tau2_integral, mode: CoeffSource::ClosedForm })
}

/// Coefficients for one step under a [`CoeffMode`].
///
/// `Auto` uses the exact closed form for 1-step predictors on constant-`τ`
/// steps and quadrature otherwise. `ClosedForm` covers 1- and 2-step
/// predictors and the 1-step corrector with constant `τ`, and fails for
/// anything else.
pub fn step_coefficients(
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    grid: &TimeGrid,
    i: usize,
    steps: usize,
    kind: StepKind,
    mode: CoeffMode,
    rule: &QuadratureRule,
) -> Result<StepCoefficients> {
    match mode {
        CoeffMode::Quadrature => quadrature_coefficients(schedule, tau, grid, i, steps, kind, rule),
        CoeffMode::ClosedForm => closed_form(schedule, tau, grid, i, steps, kind),
        CoeffMode::Auto => {
            if kind == StepKind::Predictor && steps == 1 {
                let (t_i, t_next) = step_times(grid, i)?;
                if constant_tau_on_step(schedule, tau, t_i, t_next).is_ok() {
                    return closed_form(schedule, tau, grid, i, 1, kind);
                }
            }
            quadrature_coefficients(schedule, tau, grid, i, steps, kind, rule)
        }
    }
}

/// Injected variance of the exact noise-parameterization update,
/// `α_{next}² ∫ 2 e^{−2λ} τ² dλ`.
pub fn noise_param_variance(schedule: &NoiseSchedule, tau: &TauSchedule, t_i: f64, t_next: f64) -> Result<f64> {
    check_reverse_step(schedule, t_i, t_next)?;
    let alpha = schedule.alpha(t_next);
    let segs = tau.segments(schedule, schedule.lambda(t_i), schedule.lambda(t_next))?;
    // e^{−2a} − e^{−2b} = e^{−2a}(1 − e^{−2(b−a)})
    let integral: f64 = segs
        .iter()
        .map(|s| s.tau * s.tau * (-2.0 * s.lo).exp() * -(-2.0 * s.width()).exp_m1())
        .sum();
    Ok(alpha * alpha * integral)
}

/// Injected variance of the data-parameterization update, `σ̃²`.
pub fn data_param_variance(schedule: &NoiseSchedule, tau: &TauSchedule, t_i: f64, t_next: f64) -> Result<f64> {
    Ok(noise_std(schedule, tau, t_i, t_next)?.powi(2))
}
