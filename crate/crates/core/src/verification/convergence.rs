//! Strong convergence orders from coupled multi-resolution solves.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::DataPredictionModel;
use crate::rng::{NormalStream, Purpose};
use crate::schedules::{NoiseSchedule, TimeGrid};
use crate::solver::{initial_state, solve_path, CoefficientPlan, SolverConfig};
use crate::stochasticity::TauSchedule;
use crate::verification::brownian::{ito_weights, BrownianPath};
use crate::verification::stats::loglog_slope;

pub const MIN_TEST_LEVELS: usize = 4;

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceSetup {
    /// Coarsest grid; test and reference grids are its dyadic refinements.
    pub base_grid: TimeGrid,
    pub test_levels: Vec<u32>,
    pub reference_level: u32,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub predictor_steps: usize,
    pub corrector_steps: usize,
    pub levels: Vec<u32>,
    pub steps: Vec<usize>,
    /// Largest `λ` step of each test grid.
    pub h: Vec<f64>,
    /// `E|x_ref − x_h|` (Euclidean norm).
    pub err_l1: Vec<f64>,
    /// `sqrt(E|x_ref − x_h|²)`.
    pub err_l2: Vec<f64>,
    pub slope_l1: f64,
    pub slope_l2: f64,
    /// L1 slope refitted without the largest `h`.
    pub slope_l1_without_largest: f64,
    /// `E|x_ref − x_{ref-1}|`: how far the reference moves when coarsened once.
    pub reference_shift: f64,
    pub n_paths: usize,
    pub reference_level: u32,
}

/// A refinement level's grid, coefficients and noise weights.
struct Level {
    grid: TimeGrid,
    plan: CoefficientPlan,
    /// Fine intervals per step.
    span: usize,
    /// `σ_n w_k` for every fine interval.
    weights: Vec<f64>,
}

impl Level {
    fn new(
        schedule: &NoiseSchedule,
        tau: &TauSchedule,
        cfg: &SolverConfig,
        base: &TimeGrid,
        level: u32,
        fine_times: &[f64],
        reference_level: u32,
    ) -> Result<Self> {
        let grid = base.refine_dyadic(schedule, level)?;
        let plan = CoefficientPlan::build(schedule, tau, &grid, cfg)?;
        let span = 1usize << (reference_level - level);
        let mut weights = Vec::with_capacity(fine_times.len() - 1);
        for k in 0..grid.steps() {
            let (a, b) = (k * span, (k + 1) * span);
            if fine_times[a] != grid.times()[k] || fine_times[b] != grid.times()[k + 1] {
                return Err(Error::PathCoverage { t_i: grid.times()[k], t_next: grid.times()[k + 1] });
            }
            let sigma_n = schedule.sigma(fine_times[b]);
            weights.extend(ito_weights(schedule, tau, fine_times, a, b)?.into_iter().map(|w| sigma_n * w));
        }
        Ok(Self { grid, plan, span, weights })
    }

    fn solve<M: DataPredictionModel + ?Sized>(
        &self,
        model: &M,
        cfg: &SolverConfig,
        x0: &[f64],
        increments: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let d = x0.len();
        let res = solve_path(model, &self.grid, &self.plan, cfg, x0.to_vec(), |k| {
            let mut noise = vec![0.0; d];
            for j in k * self.span..(k + 1) * self.span {
                let w = self.weights[j];
                if w != 0.0 {
                    noise.iter_mut().zip(&increments[j]).for_each(|(n, dw)| *n += w * dw);
                }
            }
            (noise, true)
        })?;
        Ok(res.final_state)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Coupled strong-error study.
///
/// Every path draws one fine Brownian realization at the reference level;
/// each test level consumes the same realization through the Itô noise of
/// its own coarse steps, so differences at `t_M` measure pathwise error.
pub fn strong_order<M: DataPredictionModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    tau: &TauSchedule,
    cfg: &SolverConfig,
    setup: &ConvergenceSetup,
) -> Result<ConvergenceReport> {
    if !model.is_affine() {
        return Err(Error::NonAffineModel);
    }
    let mut levels = setup.test_levels.clone();
    levels.sort_unstable();
    levels.dedup();
    if levels.len() < MIN_TEST_LEVELS {
        return Err(Error::InsufficientLevels { needed: MIN_TEST_LEVELS, got: levels.len() });
    }
    let top = setup.reference_level;
    if top == 0 || levels.iter().any(|&l| l >= top) {
        return Err(Error::InvalidParams(format!("test levels {levels:?} must lie below the reference level {top}")));
    }
    let fine = setup.base_grid.refine_dyadic(schedule, top)?;
    let path = BrownianPath::new(&fine, setup.seed, model.dim());
    let build = |l: u32| Level::new(schedule, tau, cfg, &setup.base_grid, l, fine.times(), top);
    let reference = build(top)?;
    let shadow = build(top - 1)?;
    let tests = levels.iter().map(|&l| build(l)).collect::<Result<Vec<_>>>()?;
    let t0 = fine.times()[0];

    let per_path = (0..setup.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let increments = path.increments(p);
            let mut s = NormalStream::new(setup.seed, Purpose::InitialState, p, model.dim());
            let x0 = initial_state(schedule, t0, &mut s);
            let x_ref = reference.solve(model, cfg, &x0, &increments)?;
            let shift = distance(&x_ref, &shadow.solve(model, cfg, &x0, &increments)?);
            let errs = tests
                .iter()
                .map(|lv| Ok(distance(&x_ref, &lv.solve(model, cfg, &x0, &increments)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((shift, errs))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = setup.n_paths as f64;
    let reference_shift = per_path.iter().map(|p| p.0).sum::<f64>() / n;
    let err_l1: Vec<f64> = (0..tests.len()).map(|j| per_path.iter().map(|p| p.1[j]).sum::<f64>() / n).collect();
    let err_l2: Vec<f64> =
        (0..tests.len()).map(|j| (per_path.iter().map(|p| p.1[j].powi(2)).sum::<f64>() / n).sqrt()).collect();
    let h: Vec<f64> = tests.iter().map(|lv| lv.grid.max_lambda_step(schedule)).collect();
    Ok(ConvergenceReport {
        predictor_steps: cfg.predictor_steps,
        corrector_steps: cfg.corrector_steps,
        steps: tests.iter().map(|lv| lv.grid.steps()).collect(),
        slope_l1: loglog_slope(&h, &err_l1),
        slope_l2: loglog_slope(&h, &err_l2),
        slope_l1_without_largest: loglog_slope(&h[1..], &err_l1[1..]),
        levels,
        h,
        err_l1,
        err_l2,
        reference_shift,
        n_paths: setup.n_paths,
        reference_level: top,
    })
}
