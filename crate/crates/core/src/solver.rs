//! The SA-Solver sampling loop and single-step baselines.

use std::collections::VecDeque;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{step_coefficients, CoeffMode, QuadratureRule, StepCoefficients, StepKind, DEFAULT_QUADRATURE_ORDER};
use crate::error::{Error, Result};
use crate::oracle::DataPredictionModel;
use crate::rng::{NormalStream, Purpose};
use crate::schedules::{NoiseSchedule, TimeGrid};
use crate::stochasticity::{ddim_sigma_hat, TauSchedule};

/// Where the model is re-evaluated after a corrector step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Buffer the evaluation at the predicted point (one NFE per step).
    #[default]
    Pec,
    /// Re-evaluate at the corrected point and buffer that instead.
    Pece,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pec" => Ok(EvalMode::Pec),
            "pece" => Ok(EvalMode::Pece),
            _ => Err(Error::InvalidParams(format!("unknown evaluation mode '{s}'"))),
        }
    }
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Pec => "pec",
            EvalMode::Pece => "pece",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub predictor_steps: usize,
    /// Zero disables the corrector.
    pub corrector_steps: usize,
    pub coeff_mode: CoeffMode,
    pub eval_mode: EvalMode,
    pub quadrature_order: usize,
    pub seed: u64,
    pub record_trajectory: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            predictor_steps: 3,
            corrector_steps: 1,
            coeff_mode: CoeffMode::Auto,
            eval_mode: EvalMode::Pec,
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            seed: 0,
            record_trajectory: false,
        }
    }
}

impl SolverConfig {
    pub fn new(predictor_steps: usize, corrector_steps: usize) -> Self {
        Self { predictor_steps, corrector_steps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.predictor_steps == 0 {
            return Err(Error::InvalidParams("predictor steps must be >= 1".into()));
        }
        if self.quadrature_order == 0 {
            return Err(Error::InvalidParams("quadrature order must be >= 1".into()));
        }
        Ok(())
    }

    /// Model evaluations per sample on an `m`-step grid.
    pub fn nfe(&self, m: usize) -> usize {
        let per_step = match self.eval_mode {
            EvalMode::Pece if self.corrector_steps > 0 => 2,
            _ => 1,
        };
        1 + m * per_step
    }
}

/// The most recent model evaluations, newest last.
#[derive(Clone, Debug)]
pub struct EvalBuffer {
    capacity: usize,
    entries: VecDeque<(f64, Vec<f64>)>,
}

impl EvalBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), entries: VecDeque::with_capacity(capacity.max(1)) }
    }

    pub fn for_config(cfg: &SolverConfig) -> Self {
        Self::new(cfg.predictor_steps.max(cfg.corrector_steps) + 1)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: f64, value: Vec<f64>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((t, value));
    }

    /// `j`-th newest evaluation (0 is the latest).
    pub fn newest(&self, j: usize) -> Option<&(f64, Vec<f64>)> {
        self.entries.len().checked_sub(j + 1).map(|k| &self.entries[k])
    }

    pub fn times(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }
}

/// Noise added by one step.
#[derive(Clone, Copy, Debug)]
pub enum StepNoise<'a> {
    /// Standard normal `ξ`, scaled by the step's `σ̃`.
    Standard(&'a [f64]),
    /// The injected term itself.
    Direct(&'a [f64]),
}

impl StepNoise<'_> {
    fn value(&self, k: usize, noise_std: f64) -> f64 {
        match self {
            StepNoise::Standard(xi) => noise_std * xi[k],
            StepNoise::Direct(v) => v[k],
        }
    }

    fn len(&self) -> usize {
        match self {
            StepNoise::Standard(v) | StepNoise::Direct(v) => v.len(),
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionError { expected, got });
    }
    Ok(())
}

/// `x_{i+1} = decay·x_i + Σ_j b_j x_θ(newest j) + noise`.
pub fn sa_predictor_step(x: &[f64], buffer: &EvalBuffer, coeffs: &StepCoefficients, noise: StepNoise) -> Result<Vec<f64>> {
    let order = coeffs.order();
    if buffer.len() < order {
        return Err(Error::InsufficientHistory { step: 0, needed: order, available: buffer.len() });
    }
    check_len(x.len(), noise.len())?;
    let mut out: Vec<f64> = x.iter().map(|v| coeffs.state_decay * v).collect();
    for (j, b) in coeffs.model_weights.iter().enumerate() {
        let e = &buffer.newest(j).expect("checked length").1;
        check_len(x.len(), e.len())?;
        out.iter_mut().zip(e).for_each(|(o, v)| *o += b * v);
    }
    out.iter_mut().enumerate().for_each(|(k, o)| *o += noise.value(k, coeffs.noise_std));
    Ok(out)
}

/// Like [`sa_predictor_step`], with `b̂_{i+1}` applied to the evaluation at
/// the predicted point and the rest to the buffered history.
pub fn sa_corrector_step(
    x: &[f64],
    predicted_eval: &[f64],
    buffer: &EvalBuffer,
    coeffs: &StepCoefficients,
    noise: StepNoise,
) -> Result<Vec<f64>> {
    let history = coeffs.order().saturating_sub(1);
    if coeffs.order() == 0 || buffer.len() < history {
        return Err(Error::InsufficientHistory { step: 0, needed: history, available: buffer.len() });
    }
    check_len(x.len(), noise.len())?;
    check_len(x.len(), predicted_eval.len())?;
    let w = &coeffs.model_weights;
    let mut out: Vec<f64> = x.iter().zip(predicted_eval).map(|(v, e)| coeffs.state_decay * v + w[0] * e).collect();
    for (j, b) in w[1..].iter().enumerate() {
        let e = &buffer.newest(j).expect("checked length").1;
        check_len(x.len(), e.len())?;
        out.iter_mut().zip(e).for_each(|(o, v)| *o += b * v);
    }
    out.iter_mut().enumerate().for_each(|(k, o)| *o += noise.value(k, coeffs.noise_std));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub predictor: StepCoefficients,
    pub corrector: Option<StepCoefficients>,
}

/// Coefficients for every step of a grid under one configuration,
/// including the truncated warm-up orders.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientPlan {
    pub steps: Vec<StepPlan>,
}

impl CoefficientPlan {
    pub fn build(schedule: &NoiseSchedule, tau: &TauSchedule, grid: &TimeGrid, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let rule = QuadratureRule::gauss_legendre(cfg.quadrature_order)?;
        let steps = (0..grid.steps())
            .into_par_iter()
            .map(|k| {
                let p = (k + 1).min(cfg.predictor_steps);
                let predictor = step_coefficients(schedule, tau, grid, k, p, StepKind::Predictor, cfg.coeff_mode, &rule)?;
                let corrector = if cfg.corrector_steps > 0 {
                    let c = (k + 1).min(cfg.corrector_steps);
                    Some(step_coefficients(schedule, tau, grid, k, c, StepKind::Corrector, cfg.coeff_mode, &rule)?)
                } else {
                    None
                };
                Ok(StepPlan { predictor, corrector })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { steps })
    }

    /// SHA-256 over the little-endian bits of each step's predictor and
    /// corrector coefficients.
    pub fn checksums(&self) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| {
                let mut h = Sha256::new();
                for c in std::iter::once(&s.predictor).chain(s.corrector.as_ref()) {
                    h.update(c.state_decay.to_le_bytes());
                    c.model_weights.iter().for_each(|w| h.update(w.to_le_bytes()));
                    h.update(c.noise_std.to_le_bytes());
                }
                h.finalize().iter().map(|b| format!("{b:02x}")).collect()
            })
            .collect()
    }
}

/// States of one sample along the grid, with the noise it consumed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub states: Vec<Vec<f64>>,
    pub predicted: Vec<Vec<f64>>,
    /// Noise shared by the predictor and corrector of each step, as fed to
    /// both (standard normals, or the injected term for direct noise).
    pub noise: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathResult {
    pub final_state: Vec<f64>,
    pub nfe: usize,
    pub record: Option<PathRecord>,
}

/// One trajectory of the predictor-corrector loop from `x0` at `t_0`.
/// `noise(k)` yields the step-`k` noise, shared by predictor and corrector.
pub fn solve_path<M, F>(
    model: &M,
    grid: &TimeGrid,
    plan: &CoefficientPlan,
    cfg: &SolverConfig,
    x0: Vec<f64>,
    mut noise: F,
) -> Result<PathResult>
where
    M: DataPredictionModel + ?Sized,
    F: FnMut(usize) -> (Vec<f64>, bool),
{
    let times = grid.times();
    check_len(model.dim(), x0.len())?;
    if plan.steps.len() != grid.steps() {
        return Err(Error::InvalidParams("coefficient plan does not match the grid".into()));
    }
    let d = x0.len();
    let mut buffer = EvalBuffer::for_config(cfg);
    let mut record = cfg.record_trajectory.then(PathRecord::default);
    let mut eval = vec![0.0; d];
    model.predict(&x0, times[0], &mut eval);
    let mut nfe = 1;
    buffer.push(times[0], eval);
    let mut x = x0;
    if let Some(r) = record.as_mut() {
        r.states.push(x.clone());
    }
    for (k, step) in plan.steps.iter().enumerate() {
        let (xi, direct) = noise(k);
        let n = if direct { StepNoise::Direct(&xi) } else { StepNoise::Standard(&xi) };
        let x_pred = sa_predictor_step(&x, &buffer, &step.predictor, n)?;
        let mut pred_eval = vec![0.0; d];
        model.predict(&x_pred, times[k + 1], &mut pred_eval);
        nfe += 1;
        let next = match &step.corrector {
            Some(corr) => {
                let x_corr = sa_corrector_step(&x, &pred_eval, &buffer, corr, n)?;
                if cfg.eval_mode == EvalMode::Pece {
                    let mut e = vec![0.0; d];
                    model.predict(&x_corr, times[k + 1], &mut e);
                    nfe += 1;
                    buffer.push(times[k + 1], e);
                } else {
                    buffer.push(times[k + 1], pred_eval);
                }
                x_corr
            }
            None => {
                buffer.push(times[k + 1], pred_eval);
                x_pred.clone()
            }
        };
        if let Some(r) = record.as_mut() {
            r.predicted.push(x_pred);
            r.noise.push(xi);
            r.states.push(next.clone());
        }
        x = next;
    }
    Ok(PathResult { final_state: x, nfe, record })
}

/// Per-step diagnostics of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t_i: f64,
    pub t_next: f64,
    pub noise_std: f64,
    pub predictor_order: usize,
    pub corrector_order: usize,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub times: Vec<f64>,
    pub config: SolverConfig,
    pub seed: u64,
    pub final_states: Vec<Vec<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub nfe_count: usize,
    pub paths: Option<Vec<PathRecord>>,
}

/// Initial state `x_{t_0} ~ N(0, σ_{t_0}² I)` (`N(0, I)` for VP schedules)
/// from block 0 of the sample's stream.
pub fn initial_state(schedule: &NoiseSchedule, t0: f64, stream: &mut NormalStream) -> Vec<f64> {
    let scale = if schedule.is_variance_preserving() { 1.0 } else { schedule.sigma(t0) };
    stream.block(0).into_iter().map(|z| scale * z).collect()
}

/// Runs the sampler for `batch` samples. Sample `i` draws everything from
/// its own stream, so results do not depend on `batch`.
pub fn sa_solve<M: DataPredictionModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    batch: usize,
) -> Result<RunRecord> {
    if grid.times().len() < 2 {
        return Err(Error::GridTooShort(grid.times().len()));
    }
    let plan = CoefficientPlan::build(schedule, tau, grid, cfg)?;
    sa_solve_with_plan(model, schedule, grid, &plan, cfg, batch)
}

pub fn sa_solve_with_plan<M: DataPredictionModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    plan: &CoefficientPlan,
    cfg: &SolverConfig,
    batch: usize,
) -> Result<RunRecord> {
    let d = model.dim();
    let t0 = grid.times()[0];
    let results = (0..batch)
        .into_par_iter()
        .map(|i| {
            let mut stream = NormalStream::new(cfg.seed, Purpose::StepNoise, i as u64, d);
            let x0 = initial_state(schedule, t0, &mut stream);
            solve_path(model, grid, plan, cfg, x0, |k| (stream.block(k as u64 + 1), false))
        })
        .collect::<Result<Vec<_>>>()?;
    let nfe_count = results.first().map_or(cfg.nfe(grid.steps()), |r| r.nfe);
    let checksums = plan.checksums();
    let diagnostics = plan
        .steps
        .iter()
        .zip(checksums)
        .enumerate()
        .map(|(k, (s, checksum))| StepDiagnostics {
            step: k,
            t_i: grid.times()[k],
            t_next: grid.times()[k + 1],
            noise_std: s.predictor.noise_std,
            predictor_order: s.predictor.order(),
            corrector_order: s.corrector.as_ref().map_or(0, |c| c.order() - 1),
            checksum,
        })
        .collect();
    let mut final_states = Vec::with_capacity(batch);
    let mut paths = cfg.record_trajectory.then(Vec::new);
    for r in results {
        final_states.push(r.final_state);
        if let (Some(p), Some(rec)) = (paths.as_mut(), r.record) {
            p.push(rec);
        }
    }
    Ok(RunRecord { times: grid.times().to_vec(), config: cfg.clone(), seed: cfg.seed, final_states, diagnostics, nfe_count, paths })
}

fn check_step(schedule: &NoiseSchedule, t_i: f64, t_next: f64) -> Result<()> {
    schedule.check_time(t_i)?;
    schedule.check_time(t_next)?;
    if !(t_next < t_i) {
        return Err(Error::OutOfDomain { t: t_next, lo: schedule.domain().0, hi: t_i });
    }
    Ok(())
}

/// DDIM-η states of sample `sample` along `grid`, drawing the initial state
/// and step noise from the same stream positions as [`sa_solve`].
pub fn ddim_path<M: DataPredictionModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    eta: f64,
    seed: u64,
    sample: u64,
) -> Result<Vec<Vec<f64>>> {
    let times = grid.times();
    let d = model.dim();
    let mut stream = NormalStream::new(seed, Purpose::StepNoise, sample, d);
    let mut x = initial_state(schedule, times[0], &mut stream);
    let mut states = vec![x.clone()];
    let mut eval = vec![0.0; d];
    for k in 0..grid.steps() {
        model.predict(&x, times[k], &mut eval);
        x = ddim_step(&x, &eval, eta, schedule, times[k], times[k + 1], &stream.block(k as u64 + 1))?;
        states.push(x.clone());
    }
    Ok(states)
}

/// DDIM-η update written through the data prediction:
/// `x_n = α_n x_θ + sqrt(σ_n² − σ̂²) ε + σ̂ ξ` with `ε = (x − α_i x_θ)/σ_i`.
pub fn ddim_step(
    x: &[f64],
    model_eval: &[f64],
    eta: f64,
    schedule: &NoiseSchedule,
    t_i: f64,
    t_next: f64,
    xi: &[f64],
) -> Result<Vec<f64>> {
    if !schedule.is_variance_preserving() {
        return Err(Error::NonVpSchedule);
    }
    check_step(schedule, t_i, t_next)?;
    check_len(x.len(), model_eval.len())?;
    check_len(x.len(), xi.len())?;
    let (a_i, s_i) = (schedule.alpha(t_i), schedule.sigma(t_i));
    let (a_n, s_n) = (schedule.alpha(t_next), schedule.sigma(t_next));
    let sigma_hat = ddim_sigma_hat(eta, schedule, t_i, t_next);
    let dir = (s_n * s_n - sigma_hat * sigma_hat).max(0.0).sqrt();
    Ok(x
        .iter()
        .zip(model_eval)
        .zip(xi)
        .map(|((xv, e), z)| a_n * e + dir * (xv - a_i * e) / s_i + sigma_hat * z)
        .collect())
}

/// Score implied by a data prediction, `−(x − α x_θ)/σ²`.
pub fn score_from_prediction(schedule: &NoiseSchedule, t: f64, x: &[f64], model_eval: &[f64]) -> Vec<f64> {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    x.iter().zip(model_eval).map(|(xv, e)| -(xv - a * e) / (s * s)).collect()
}

/// One Euler–Maruyama step of the reverse SDE from `t_i` down to `t_next`.
pub fn euler_maruyama_step(
    x: &[f64],
    score: &[f64],
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    t_i: f64,
    t_next: f64,
    xi: &[f64],
) -> Result<Vec<f64>> {
    check_step(schedule, t_i, t_next)?;
    check_len(x.len(), score.len())?;
    check_len(x.len(), xi.len())?;
    let f = schedule.dlog_alpha_dt(t_i);
    let g2 = schedule.g2(t_i);
    let tv = tau.eval(t_i);
    let dt = t_next - t_i;
    let diffusion = tv * g2.sqrt() * (-dt).sqrt();
    Ok(x
        .iter()
        .zip(score)
        .zip(xi)
        .map(|((xv, sc), z)| xv + (f * xv - 0.5 * (1.0 + tv * tv) * g2 * sc) * dt + diffusion * z)
        .collect())
}

/// One step of the exact noise-parameterization solution with the noise
/// prediction frozen at `t_i`.
pub fn noise_param_onestep(
    x: &[f64],
    model_eval: &[f64],
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    t_i: f64,
    t_next: f64,
    xi: &[f64],
) -> Result<Vec<f64>> {
    check_step(schedule, t_i, t_next)?;
    check_len(x.len(), model_eval.len())?;
    check_len(x.len(), xi.len())?;
    let (a_i, s_i) = (schedule.alpha(t_i), schedule.sigma(t_i));
    let a_n = schedule.alpha(t_next);
    let segs = tau.segments(schedule, schedule.lambda(t_i), schedule.lambda(t_next))?;
    // ∫ e^{−λ}(1+τ²) dλ over each constant piece
    let drift: f64 = segs
        .iter()
        .map(|s| (1.0 + s.tau * s.tau) * (-s.lo).exp() * -(-s.width()).exp_m1())
        .sum();
    let std = crate::coefficients::noise_param_variance(schedule, tau, t_i, t_next)?.sqrt();
    Ok(x
        .iter()
        .zip(model_eval)
        .zip(xi)
        .map(|((xv, e), z)| {
            let eps = (xv - a_i * e) / s_i;
            a_n / a_i * xv - a_n * drift * eps + std * z
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{predictor_coefficients, QuadratureRule};
    use crate::oracle::{GaussianMixture, GmmModel};
    use crate::schedules::{make_time_grid, GridKind, GridParams};
    use crate::stochasticity::tau_from_eta;

    fn vp() -> NoiseSchedule {
        NoiseSchedule::vp_linear(0.1, 20.0).unwrap()
    }

    struct Zero(usize);

    impl DataPredictionModel for Zero {
        fn dim(&self) -> usize {
            self.0
        }
        fn predict(&self, _: &[f64], _: f64, out: &mut [f64]) {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
        fn is_affine(&self) -> bool {
            true
        }
    }

    /// `x_θ(x, t) = a(t) x + c(t)` as explicit coefficients.
    fn affine_parts(model: &GmmModel, t: f64) -> (f64, f64) {
        let mut c = [0.0];
        let mut one = [0.0];
        model.predict(&[0.0], t, &mut c);
        model.predict(&[1.0], t, &mut one);
        (one[0] - c[0], c[0])
    }

    fn gaussian_model(s: NoiseSchedule) -> GmmModel {
        GmmModel::new(GaussianMixture::gaussian(vec![0.7], 0.4).unwrap(), s)
    }

    #[test]
    fn buffer_is_bounded_and_ordered() {
        let mut b = EvalBuffer::new(3);
        for k in 0..5 {
            b.push(1.0 - k as f64 * 0.1, vec![k as f64]);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.newest(0).unwrap().1, vec![4.0]);
        assert_eq!(b.newest(2).unwrap().1, vec![2.0]);
        assert!(b.newest(3).is_none());
        let t = b.times();
        assert!(t.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn zero_model_pure_decay() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformT, 4, GridParams::default()).unwrap();
        let c = predictor_coefficients(&s, &TauSchedule::zero(), &g, 1, 1, &QuadratureRule::default()).unwrap();
        let mut b = EvalBuffer::new(2);
        b.push(g.times()[1], vec![0.0, 0.0]);
        let out = sa_predictor_step(&[1.0, -2.0], &b, &c, StepNoise::Standard(&[0.3, 0.3])).unwrap();
        let ratio = s.sigma(g.times()[2]) / s.sigma(g.times()[1]);
        assert_eq!(out, vec![ratio, -2.0 * ratio]);
    }

    #[test]
    fn zero_model_full_run_telescopes() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformLambda, 9, GridParams::default()).unwrap();
        let cfg = SolverConfig { seed: 3, ..SolverConfig::new(3, 2) };
        let r = sa_solve(&Zero(2), &s, &TauSchedule::zero(), &g, &cfg, 1).unwrap();
        let x0 = initial_state(&s, g.times()[0], &mut NormalStream::new(3, Purpose::StepNoise, 0, 2));
        let ratio = s.sigma(g.times()[9]) / s.sigma(g.times()[0]);
        for (got, x) in r.final_states[0].iter().zip(&x0) {
            assert!((got - ratio * x).abs() < 1e-13);
        }
    }

    #[test]
    fn one_step_predictor_is_ddim_eta_zero() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformT, 8, GridParams::default()).unwrap();
        let (ti, tn) = (g.times()[3], g.times()[4]);
        let c = predictor_coefficients(&s, &TauSchedule::zero(), &g, 3, 1, &QuadratureRule::default()).unwrap();
        let (x, e) = ([0.8], [0.3]);
        let mut b = EvalBuffer::new(1);
        b.push(ti, e.to_vec());
        let sa = sa_predictor_step(&x, &b, &c, StepNoise::Standard(&[0.0])).unwrap();
        let dd = ddim_step(&x, &e, 0.0, &s, ti, tn, &[0.0]).unwrap();
        assert!((sa[0] - dd[0]).abs() < 1e-12);
        let h = s.lambda(tn) - s.lambda(ti);
        let hand = s.sigma(tn) / s.sigma(ti) * 0.8 + s.alpha(tn) * (1.0 - (-h).exp()) * 0.3;
        assert!((sa[0] - hand).abs() < 1e-12);
    }

    #[test]
    fn insufficient_history_rejected() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformT, 8, GridParams::default()).unwrap();
        let c = predictor_coefficients(&s, &TauSchedule::zero(), &g, 3, 3, &QuadratureRule::default()).unwrap();
        let mut b = EvalBuffer::new(4);
        b.push(0.5, vec![0.0]);
        assert!(matches!(sa_predictor_step(&[0.0], &b, &c, StepNoise::Standard(&[0.0])), Err(Error::InsufficientHistory { .. })));
    }

    /// Independent affine recurrence: with `x_θ = a_k x + c_k`, each step is a
    /// scalar linear map; the buffer is the list of past `(a, c, x)`.
    fn affine_oracle(s: &NoiseSchedule, tau: &TauSchedule, g: &TimeGrid, cfg: &SolverConfig, x0: f64, xis: &[f64]) -> f64 {
        let model = gaussian_model(*s);
        let q = QuadratureRule::default();
        let t = g.times();
        let mut hist: Vec<f64> = Vec::new();
        let f = |x: f64, k: usize| {
            let (a, c) = affine_parts(&model, t[k]);
            a * x + c
        };
        hist.push(f(x0, 0));
        let mut x = x0;
        for k in 0..g.steps() {
            let p = (k + 1).min(cfg.predictor_steps);
            let pc = predictor_coefficients(s, tau, g, k, p, &q).unwrap();
            let mut xp = pc.state_decay * x + pc.noise_std * xis[k];
            for j in 0..p {
                xp += pc.model_weights[j] * hist[hist.len() - 1 - j];
            }
            let ep = f(xp, k + 1);
            if cfg.corrector_steps > 0 {
                let cs = (k + 1).min(cfg.corrector_steps);
                let cc = crate::coefficients::corrector_coefficients(s, tau, g, k, cs, &q).unwrap();
                let mut xc = cc.state_decay * x + cc.noise_std * xis[k] + cc.model_weights[0] * ep;
                for j in 0..cs {
                    xc += cc.model_weights[j + 1] * hist[hist.len() - 1 - j];
                }
                x = xc;
            } else {
                x = xp;
            }
            hist.push(ep);
        }
        x
    }

    #[test]
    fn matches_affine_recurrence() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformLambda, 6, GridParams::default()).unwrap();
        let model = gaussian_model(s);
        for (sp, sc, tau_v) in [(2, 0, 0.0), (1, 1, 0.0), (3, 2, 0.7), (2, 3, 1.0)] {
            let tau = TauSchedule::constant(tau_v).unwrap();
            let cfg = SolverConfig { coeff_mode: CoeffMode::Quadrature, ..SolverConfig::new(sp, sc) };
            let plan = CoefficientPlan::build(&s, &tau, &g, &cfg).unwrap();
            let xis: Vec<f64> = (0..6).map(|k| (k as f64 * 0.7).sin()).collect();
            let res = solve_path(&model, &g, &plan, &cfg, vec![0.4], |k| (vec![xis[k]], false)).unwrap();
            let want = affine_oracle(&s, &tau, &g, &cfg, 0.4, &xis);
            assert!((res.final_state[0] - want).abs() < 1e-12, "({sp},{sc},{tau_v}): {} vs {want}", res.final_state[0]);
        }
    }

    #[test]
    fn zero_corrector_weight_reduces_to_predictor() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformT, 5, GridParams::default()).unwrap();
        let q = QuadratureRule::default();
        let tau = TauSchedule::constant(0.5).unwrap();
        let p = predictor_coefficients(&s, &tau, &g, 2, 2, &q).unwrap();
        let mut c = p.clone();
        c.model_weights.insert(0, 0.0);
        let mut b = EvalBuffer::new(3);
        b.push(g.times()[1], vec![0.2]);
        b.push(g.times()[2], vec![-0.1]);
        let xi = [0.9];
        let xp = sa_predictor_step(&[0.5], &b, &p, StepNoise::Standard(&xi)).unwrap();
        let xc = sa_corrector_step(&[0.5], &[123.0], &b, &c, StepNoise::Standard(&xi)).unwrap();
        assert_eq!(xp, xc);
    }

    #[test]
    fn nfe_accounting() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformT, 7, GridParams::default()).unwrap();
        let model = gaussian_model(s);
        let tau = TauSchedule::constant(1.0).unwrap();
        for (sp, sc, mode) in [(1, 0, EvalMode::Pec), (3, 2, EvalMode::Pec), (3, 0, EvalMode::Pece), (2, 2, EvalMode::Pece)] {
            let cfg = SolverConfig { eval_mode: mode, ..SolverConfig::new(sp, sc) };
            let r = sa_solve(&model, &s, &tau, &g, &cfg, 2).unwrap();
            assert_eq!(r.nfe_count, cfg.nfe(7));
            let want = match mode {
                EvalMode::Pec => 1 + 7,
                EvalMode::Pece => 1 + 7 * (1 + usize::from(sc > 0)),
            };
            assert_eq!(r.nfe_count, want);
        }
    }

    #[test]
    fn single_step_grid() {
        let s = vp();
        let g = TimeGrid::from_times(&s, vec![0.8, 0.2]).unwrap();
        let model = gaussian_model(s);
        let r = sa_solve(&model, &s, &TauSchedule::zero(), &g, &SolverConfig::new(3, 3), 1).unwrap();
        assert_eq!(r.diagnostics.len(), 1);
        assert_eq!(r.diagnostics[0].predictor_order, 1);
        assert_eq!(r.diagnostics[0].corrector_order, 1);
    }

    #[test]
    fn warm_up_orders() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformT, 6, GridParams::default()).unwrap();
        let plan = CoefficientPlan::build(&s, &TauSchedule::zero(), &g, &SolverConfig::new(3, 2)).unwrap();
        let p: Vec<usize> = plan.steps.iter().map(|s| s.predictor.order()).collect();
        let c: Vec<usize> = plan.steps.iter().map(|s| s.corrector.as_ref().unwrap().order()).collect();
        assert_eq!(p, vec![1, 2, 3, 3, 3, 3]);
        assert_eq!(c, vec![2, 3, 3, 3, 3, 3]);
    }

    #[test]
    fn shared_noise_between_predictor_and_corrector() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformT, 5, GridParams::default()).unwrap();
        let model = gaussian_model(s);
        let tau = TauSchedule::constant(1.0).unwrap();
        let cfg = SolverConfig { record_trajectory: true, seed: 4, ..SolverConfig::new(2, 1) };
        let r = sa_solve(&model, &s, &tau, &g, &cfg, 1).unwrap();
        let path = &r.paths.as_ref().unwrap()[0];
        let plan = CoefficientPlan::build(&s, &tau, &g, &cfg).unwrap();
        let mut buf = EvalBuffer::for_config(&cfg);
        let mut e = vec![0.0];
        model.predict(&path.states[0], g.times()[0], &mut e);
        buf.push(g.times()[0], e);
        for k in 0..5 {
            let xi = &path.noise[k];
            let xp = sa_predictor_step(&path.states[k], &buf, &plan.steps[k].predictor, StepNoise::Standard(xi)).unwrap();
            assert_eq!(xp, path.predicted[k]);
            let mut ep = vec![0.0];
            model.predict(&xp, g.times()[k + 1], &mut ep);
            let xc = sa_corrector_step(&path.states[k], &ep, &buf, plan.steps[k].corrector.as_ref().unwrap(), StepNoise::Standard(xi)).unwrap();
            assert_eq!(xc, path.states[k + 1]);
            buf.push(g.times()[k + 1], ep);
        }
    }

    #[test]
    fn deterministic_and_batch_independent() {
        let s = NoiseSchedule::vp_cosine();
        let g = make_time_grid(&s, GridKind::UniformLambda, 10, GridParams::default()).unwrap();
        let model = GmmModel::new(GaussianMixture::new(vec![0.5, 0.5], vec![vec![-1.0, 0.0], vec![1.0, 0.5]], vec![0.3, 0.3]).unwrap(), s);
        let tau = TauSchedule::constant(1.0).unwrap();
        let cfg = SolverConfig { seed: 99, ..SolverConfig::new(3, 3) };
        let a = sa_solve(&model, &s, &tau, &g, &cfg, 8).unwrap();
        let b = sa_solve(&model, &s, &tau, &g, &cfg, 8).unwrap();
        let c = sa_solve(&model, &s, &tau, &g, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a.final_states[..3], &c.final_states[..]);
    }

    #[test]
    fn ve_initial_state_is_scaled() {
        let s = NoiseSchedule::ve(0.02, 80.0).unwrap();
        let mut st = NormalStream::new(1, Purpose::StepNoise, 0, 2);
        let raw = NormalStream::new(1, Purpose::StepNoise, 0, 2).block(0);
        let x = initial_state(&s, 1.0, &mut st);
        assert!((x[0] - 80.0 * raw[0]).abs() < 1e-12);
    }

    #[test]
    fn ddim_rejects_ve() {
        let s = NoiseSchedule::ve(0.02, 80.0).unwrap();
        assert!(matches!(ddim_step(&[0.0], &[0.0], 0.5, &s, 0.5, 0.4, &[0.0]), Err(Error::NonVpSchedule)));
    }

    #[test]
    fn ddim_eta_one_is_ddpm_posterior_std() {
        let s = vp();
        let (ti, tn) = (0.6, 0.5);
        let (a_i, a_n) = (s.alpha(ti), s.alpha(tn));
        let beta_bar = 1.0 - (a_i / a_n).powi(2);
        let ddpm = ((1.0 - a_n * a_n) / (1.0 - a_i * a_i) * beta_bar).sqrt();
        assert!((ddim_sigma_hat(1.0, &s, ti, tn) - ddpm).abs() < 1e-15);
        let base = ddim_step(&[0.3], &[0.1], 1.0, &s, ti, tn, &[0.0]).unwrap()[0];
        let moved = ddim_step(&[0.3], &[0.1], 1.0, &s, ti, tn, &[1.0]).unwrap()[0];
        assert!((moved - base - ddpm).abs() < 1e-14);
    }

    #[test]
    fn ddim_eta_matches_sa_with_tau_eta() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformT, 10, GridParams::default()).unwrap();
        let (ti, tn) = (g.times()[4], g.times()[5]);
        let tau = TauSchedule::constant(tau_from_eta(0.5, &s, ti, tn).unwrap()).unwrap();
        let c = predictor_coefficients(&s, &tau, &g, 4, 1, &QuadratureRule::default()).unwrap();
        let mut b = EvalBuffer::new(1);
        b.push(ti, vec![0.25]);
        let sa = sa_predictor_step(&[-0.6], &b, &c, StepNoise::Standard(&[1.3])).unwrap();
        let dd = ddim_step(&[-0.6], &[0.25], 0.5, &s, ti, tn, &[1.3]).unwrap();
        assert!((sa[0] - dd[0]).abs() < 1e-10);
    }

    #[test]
    fn euler_maruyama_hand_value() {
        let s = vp();
        let tau = TauSchedule::constant(0.5).unwrap();
        let (ti, tn) = (0.5, 0.48);
        let out = euler_maruyama_step(&[0.4], &[-0.3], &s, &tau, ti, tn, &[1.1]).unwrap()[0];
        let beta: f64 = 0.1 + 0.5 * (20.0 - 0.1);
        let (f, g2) = (-0.5 * beta, beta);
        let want = 0.4 + (f * 0.4 - 0.5 * 1.25 * g2 * -0.3) * -0.02 + 0.5 * g2.sqrt() * 0.02f64.sqrt() * 1.1;
        assert!((out - want).abs() < 1e-12);
        let ode = euler_maruyama_step(&[0.4], &[-0.3], &s, &TauSchedule::zero(), ti, tn, &[1.1]).unwrap()[0];
        assert!((ode - (0.4 + (f * 0.4 - 0.5 * g2 * -0.3) * -0.02)).abs() < 1e-12);
    }

    #[test]
    fn noise_param_step_cases() {
        let s = vp();
        let (ti, tn) = (0.6, 0.45);
        let (x, e) = ([0.7], [0.2]);
        let ode = noise_param_onestep(&x, &e, &s, &TauSchedule::zero(), ti, tn, &[5.0]).unwrap();
        let dd = ddim_step(&x, &e, 0.0, &s, ti, tn, &[0.0]).unwrap();
        assert!((ode[0] - dd[0]).abs() < 1e-12);
        // τ = 1: hand evaluation
        let tau = TauSchedule::constant(1.0).unwrap();
        let out = noise_param_onestep(&x, &e, &s, &tau, ti, tn, &[0.5]).unwrap()[0];
        let (li, ln) = (s.lambda(ti), s.lambda(tn));
        let (a_i, a_n, s_i) = (s.alpha(ti), s.alpha(tn), s.sigma(ti));
        let eps = (0.7 - a_i * 0.2) / s_i;
        let var = a_n * a_n * ((-2.0 * li).exp() - (-2.0 * ln).exp());
        let want = a_n / a_i * 0.7 - a_n * 2.0 * ((-li).exp() - (-ln).exp()) * eps + var.sqrt() * 0.5;
        assert!((out - want).abs() < 1e-12);
        let data_std = crate::coefficients::noise_std(&s, &tau, ti, tn).unwrap();
        assert!(var.sqrt() > data_std);
    }

    #[test]
    fn direct_and_standard_noise_agree() {
        let s = vp();
        let g = make_time_grid(&s, GridKind::UniformT, 6, GridParams::default()).unwrap();
        let model = gaussian_model(s);
        let tau = TauSchedule::constant(1.0).unwrap();
        let cfg = SolverConfig::new(2, 2);
        let plan = CoefficientPlan::build(&s, &tau, &g, &cfg).unwrap();
        let direct: Vec<f64> = (0..6).map(|k| 0.1 * (k as f64 + 1.0)).collect();
        let a = solve_path(&model, &g, &plan, &cfg, vec![0.3], |k| (vec![direct[k]], true)).unwrap();
        let b = solve_path(&model, &g, &plan, &cfg, vec![0.3], |k| (vec![direct[k] / plan.steps[k].predictor.noise_std], false)).unwrap();
        assert!((a.final_state[0] - b.final_state[0]).abs() <= 1e-14 * a.final_state[0].abs().max(1.0));
    }
}
