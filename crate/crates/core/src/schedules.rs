//! Noise schedules `(α_t, σ_t, λ_t)` and the time grids solvers step along.
//!
//! Every schedule exposes the log-SNR `λ_t = log(α_t/σ_t)`, which is strictly
//! decreasing in `t`. Solvers integrate in `λ`, so each family also provides
//! `dλ/dt` in closed form and an inverse `λ ↦ t` by bisection.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower end of the time domain for variance-preserving schedules
/// (`σ_0 = 0` makes `λ` singular at `t = 0`).
pub const VP_T_EPS: f64 = 1e-3;
/// End time of the cosine schedule; `α` vanishes at `t = 1`.
pub const VP_COSINE_T_END: f64 = 0.9946;
pub const VP_COSINE_OFFSET: f64 = 0.008;

const BISECTION_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    VpLinear,
    VpCosine,
    Ve,
    Edm,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::VpLinear => "vp-linear",
            ScheduleKind::VpCosine => "vp-cosine",
            ScheduleKind::Ve => "ve",
            ScheduleKind::Edm => "edm",
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vp-linear" | "vp_linear" => Ok(ScheduleKind::VpLinear),
            "vp-cosine" | "vp_cosine" => Ok(ScheduleKind::VpCosine),
            "ve" => Ok(ScheduleKind::Ve),
            "edm" => Ok(ScheduleKind::Edm),
            other => Err(Error::InvalidParams(format!("unknown schedule kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
enum Family {
    VpLinear { beta_min: f64, beta_max: f64 },
    VpCosine { offset: f64 },
    Ve { sigma_min: f64, sigma_max: f64 },
    /// `σ_t = t`, `α_t = 1`.
    Edm,
}

/// `(α_t, σ_t, λ_t)` at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchedulePoint {
    pub alpha: f64,
    pub sigma: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    family: Family,
    t_min: f64,
    t_max: f64,
}

impl NoiseSchedule {
    /// Linear-β VP schedule: `log α_t = -(β_max-β_min)t²/4 - β_min t/2` on `[1e-3, 1]`.
    pub fn vp_linear(beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(beta_min > 0.0 && beta_max > beta_min) {
            return Err(Error::InvalidParams(format!(
                "vp-linear needs 0 < beta_min < beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        Ok(Self { family: Family::VpLinear { beta_min, beta_max }, t_min: VP_T_EPS, t_max: 1.0 })
    }

    /// Cosine VP schedule `α_t = cos(π/2·(t+s)/(1+s)) / cos(π/2·s/(1+s))` on `[1e-3, 0.9946]`.
    pub fn vp_cosine() -> Self {
        Self {
            family: Family::VpCosine { offset: VP_COSINE_OFFSET },
            t_min: VP_T_EPS,
            t_max: VP_COSINE_T_END,
        }
    }

    /// Geometric VE schedule `σ_t = σ_min (σ_max/σ_min)^t`, `α_t = 1`, on `[0, 1]`.
    pub fn ve(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        check_sigma_range(sigma_min, sigma_max)?;
        Ok(Self { family: Family::Ve { sigma_min, sigma_max }, t_min: 0.0, t_max: 1.0 })
    }

    /// EDM parameterization `σ_t = t`, `α_t = 1`, on `[σ_min, σ_max]`.
    pub fn edm(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        check_sigma_range(sigma_min, sigma_max)?;
        Ok(Self { family: Family::Edm, t_min: sigma_min, t_max: sigma_max })
    }

    /// Restricts or moves the time domain. Fails if the new domain is empty or
    /// leaves the region where `σ_t > 0` and `α_t > 0`.
    pub fn with_domain(mut self, t_min: f64, t_max: f64) -> Result<Self> {
        let ok = t_min < t_max
            && t_min.is_finite()
            && t_max.is_finite()
            && match self.family {
                Family::VpLinear { .. } => t_min > 0.0,
                Family::VpCosine { .. } => t_min > 0.0 && t_max < 1.0,
                Family::Ve { .. } => true,
                Family::Edm => t_min > 0.0,
            };
        if !ok {
            return Err(Error::InvalidParams(format!(
                "invalid time domain [{t_min}, {t_max}] for {}",
                self.kind().name()
            )));
        }
        self.t_min = t_min;
        self.t_max = t_max;
        Ok(self)
    }

    pub fn kind(&self) -> ScheduleKind {
        match self.family {
            Family::VpLinear { .. } => ScheduleKind::VpLinear,
            Family::VpCosine { .. } => ScheduleKind::VpCosine,
            Family::Ve { .. } => ScheduleKind::Ve,
            Family::Edm => ScheduleKind::Edm,
        }
    }

    pub fn is_variance_preserving(&self) -> bool {
        matches!(self.family, Family::VpLinear { .. } | Family::VpCosine { .. })
    }

    /// `(t_eps, T)`.
    pub fn domain(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }

    pub fn t_eps(&self) -> f64 {
        self.t_min
    }

    pub fn t_end(&self) -> f64 {
        self.t_max
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { t, lo: self.t_min, hi: self.t_max })
        }
    }

    /// Checked evaluation of `(α_t, σ_t, λ_t)`.
    pub fn eval(&self, t: f64) -> Result<SchedulePoint> {
        self.check_time(t)?;
        Ok(SchedulePoint { alpha: self.alpha(t), sigma: self.sigma(t), lambda: self.lambda(t) })
    }

    // The accessors below do not check the domain; callers inside the crate
    // only pass grid times that were validated on construction.

    pub fn log_alpha(&self, t: f64) -> f64 {
        match self.family {
            Family::VpLinear { beta_min, beta_max } => {
                -0.25 * (beta_max - beta_min) * t * t - 0.5 * beta_min * t
            }
            Family::VpCosine { offset } => {
                let theta = FRAC_PI_2 * (t + offset) / (1.0 + offset);
                let theta0 = FRAC_PI_2 * offset / (1.0 + offset);
                theta.cos().ln() - theta0.cos().ln()
            }
            Family::Ve { .. } | Family::Edm => 0.0,
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        self.log_alpha(t).exp()
    }

    /// `log σ_t`, computed without forming `1 - α²` by subtraction for VP kinds.
    pub fn log_sigma(&self, t: f64) -> f64 {
        match self.family {
            Family::VpLinear { .. } | Family::VpCosine { .. } => {
                0.5 * (-(2.0 * self.log_alpha(t)).exp_m1()).ln()
            }
            Family::Ve { sigma_min, sigma_max } => sigma_min.ln() + t * (sigma_max / sigma_min).ln(),
            Family::Edm => t.ln(),
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.family {
            Family::VpLinear { .. } | Family::VpCosine { .. } => {
                (-(2.0 * self.log_alpha(t)).exp_m1()).sqrt()
            }
            Family::Ve { .. } => self.log_sigma(t).exp(),
            Family::Edm => t,
        }
    }

    /// `(α_t, σ_t)` sharing one evaluation of `log α_t`.
    pub fn alpha_sigma(&self, t: f64) -> (f64, f64) {
        match self.family {
            Family::VpLinear { .. } | Family::VpCosine { .. } => {
                let la = self.log_alpha(t);
                (la.exp(), (-(2.0 * la).exp_m1()).sqrt())
            }
            _ => (self.alpha(t), self.sigma(t)),
        }
    }

    pub fn lambda(&self, t: f64) -> f64 {
        self.log_alpha(t) - self.log_sigma(t)
    }

    /// `σ_t / α_t = exp(-λ_t)`.
    pub fn sigma_edm(&self, t: f64) -> f64 {
        (-self.lambda(t)).exp()
    }

    /// Drift coefficient `f(t) = d log α_t / dt`.
    pub fn dlog_alpha_dt(&self, t: f64) -> f64 {
        match self.family {
            Family::VpLinear { beta_min, beta_max } => -0.5 * (beta_max - beta_min) * t - 0.5 * beta_min,
            Family::VpCosine { offset } => {
                let scale = FRAC_PI_2 / (1.0 + offset);
                -scale * (scale * (t + offset)).tan()
            }
            Family::Ve { .. } | Family::Edm => 0.0,
        }
    }

    /// `dλ/dt`, negative everywhere on the domain.
    pub fn dlambda_dt(&self, t: f64) -> f64 {
        match self.family {
            // λ = log α - ½ log(1 - α²)  ⇒  λ' = (log α)' / σ²
            Family::VpLinear { .. } | Family::VpCosine { .. } => {
                let sigma2 = -(2.0 * self.log_alpha(t)).exp_m1();
                self.dlog_alpha_dt(t) / sigma2
            }
            Family::Ve { sigma_min, sigma_max } => -(sigma_max / sigma_min).ln(),
            Family::Edm => -1.0 / t,
        }
    }

    /// Squared diffusion coefficient `g²(t) = -2σ_t² dλ/dt`.
    pub fn g2(&self, t: f64) -> f64 {
        let sigma = self.sigma(t);
        -2.0 * sigma * sigma * self.dlambda_dt(t)
    }

    /// `[λ(T), λ(t_eps)]`.
    pub fn lambda_range(&self) -> (f64, f64) {
        (self.lambda(self.t_max), self.lambda(self.t_min))
    }

    /// Time at which `λ_t = lambda`, found by bisection on the monotone map.
    pub fn lambda_inverse(&self, lambda: f64) -> Result<f64> {
        let (lo_l, hi_l) = self.lambda_range();
        if !(lambda >= lo_l && lambda <= hi_l) {
            return Err(Error::OutOfRange { value: lambda, lo: lo_l, hi: hi_l });
        }
        if lambda == hi_l {
            return Ok(self.t_min);
        }
        if lambda == lo_l {
            return Ok(self.t_max);
        }
        // λ(lo) > λ* > λ(hi)
        let (mut lo, mut hi) = (self.t_min, self.t_max);
        for _ in 0..BISECTION_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.lambda(mid) > lambda {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (dl, dh) = ((self.lambda(lo) - lambda).abs(), (self.lambda(hi) - lambda).abs());
        Ok(if dl <= dh { lo } else { hi })
    }

    /// Time at which `σ_t/α_t = sigma_edm`.
    pub fn sigma_edm_inverse(&self, sigma_edm: f64) -> Result<f64> {
        if !(sigma_edm > 0.0) {
            let (lo, hi) = self.lambda_range();
            return Err(Error::OutOfRange { value: sigma_edm, lo: (-hi).exp(), hi: (-lo).exp() });
        }
        let lambda = -sigma_edm.ln();
        self.lambda_inverse(lambda).map_err(|_| {
            let (lo, hi) = self.lambda_range();
            Error::OutOfRange { value: sigma_edm, lo: (-hi).exp(), hi: (-lo).exp() }
        })
    }
}

fn check_sigma_range(sigma_min: f64, sigma_max: f64) -> Result<()> {
    if sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
        )))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    UniformT,
    UniformLambda,
    EdmRho,
    /// Built from explicit times or by refinement.
    Custom,
}

impl GridKind {
    pub fn name(self) -> &'static str {
        match self {
            GridKind::UniformT => "uniform-t",
            GridKind::UniformLambda => "uniform-lambda",
            GridKind::EdmRho => "edm",
            GridKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-t" | "uniform_t" => Ok(GridKind::UniformT),
            "uniform-lambda" | "uniform_lambda" => Ok(GridKind::UniformLambda),
            "edm" | "edm-rho" | "edm_rho" => Ok(GridKind::EdmRho),
            other => Err(Error::InvalidParams(format!("unknown grid kind `{other}`"))),
        }
    }
}

/// Parameters of the EDM ρ-grid; ignored by the uniform kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { sigma_min: 0.02, sigma_max: 80.0, rho: 7.0 }
    }
}

/// Strictly decreasing times `t_0 > t_1 > … > t_M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    kind: GridKind,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn from_times(schedule: &NoiseSchedule, times: Vec<f64>) -> Result<Self> {
        Self::validated(schedule, GridKind::Custom, times)
    }

    fn validated(schedule: &NoiseSchedule, kind: GridKind, times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::GridTooShort(times.len()));
        }
        for &t in &times {
            schedule.check_time(t)?;
        }
        if let Some(w) = times.windows(2).find(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidParams(format!(
                "grid times must be strictly decreasing, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self { kind, times })
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn lambdas(&self, schedule: &NoiseSchedule) -> Vec<f64> {
        self.times.iter().map(|&t| schedule.lambda(t)).collect()
    }

    /// Largest step in `λ`.
    pub fn max_lambda_step(&self, schedule: &NoiseSchedule) -> f64 {
        self.lambdas(schedule).windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Splits every step into `2^level` sub-steps of equal width in `λ`.
    /// Existing nodes are kept bit-exactly, so coarse grids are subsets of the
    /// refined one.
    pub fn refine_dyadic(&self, schedule: &NoiseSchedule, level: u32) -> Result<TimeGrid> {
        let parts = 1usize << level;
        let mut times = Vec::with_capacity(self.steps() * parts + 1);
        for w in self.times.windows(2) {
            let (la, lb) = (schedule.lambda(w[0]), schedule.lambda(w[1]));
            times.push(w[0]);
            for k in 1..parts {
                let lam = la + (lb - la) * (k as f64 / parts as f64);
                times.push(schedule.lambda_inverse(lam)?);
            }
        }
        times.push(*self.times.last().expect("grid has nodes"));
        Self::validated(schedule, GridKind::Custom, times)
    }
}

/// Builds an `M`-step grid from `T` (or `σ_max`) down to `t_eps` (or `σ_min`).
pub fn make_time_grid(
    schedule: &NoiseSchedule,
    kind: GridKind,
    steps: usize,
    params: GridParams,
) -> Result<TimeGrid> {
    if steps < 2 {
        return Err(Error::InvalidParams(format!("grid needs M >= 2 steps, got {steps}")));
    }
    let m = steps as f64;
    let (t_eps, t_end) = schedule.domain();
    let times = match kind {
        GridKind::UniformT => (0..=steps)
            .map(|i| match i {
                0 => t_end,
                i if i == steps => t_eps,
                i => t_end + (i as f64 / m) * (t_eps - t_end),
            })
            .collect::<Vec<_>>(),
        GridKind::UniformLambda => {
            let (l_end, l_eps) = schedule.lambda_range();
            let mut times = Vec::with_capacity(steps + 1);
            times.push(t_end);
            for i in 1..steps {
                times.push(schedule.lambda_inverse(l_end + (i as f64 / m) * (l_eps - l_end))?);
            }
            times.push(t_eps);
            times
        }
        GridKind::EdmRho => {
            let GridParams { sigma_min, sigma_max, rho } = params;
            if !(sigma_min > 0.0 && sigma_min < sigma_max) {
                return Err(Error::InvalidParams(format!(
                    "edm grid needs 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
                )));
            }
            if !(rho > 0.0) {
                return Err(Error::InvalidParams(format!("edm grid needs rho > 0, got {rho}")));
            }
            (0..=steps)
                .map(|i| schedule.sigma_edm_inverse(edm_rho_sigma(sigma_min, sigma_max, rho, i, steps)))
                .collect::<Result<Vec<_>>>()?
        }
        GridKind::Custom => {
            return Err(Error::InvalidParams("custom grids are built with TimeGrid::from_times".into()))
        }
    };
    TimeGrid::validated(schedule, kind, times)
}

/// `σ_i = (σ_max^{1/ρ} + (i/M)(σ_min^{1/ρ} - σ_max^{1/ρ}))^ρ`.
pub fn edm_rho_sigma(sigma_min: f64, sigma_max: f64, rho: f64, i: usize, steps: usize) -> f64 {
    if i == 0 {
        return sigma_max;
    }
    if i == steps {
        return sigma_min;
    }
    let (a, b) = (sigma_max.powf(1.0 / rho), sigma_min.powf(1.0 / rho));
    (a + (i as f64 / steps as f64) * (b - a)).powf(rho)
}
