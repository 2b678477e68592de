//! Distribution-level checks on 1-D mixtures: KS distance of sampler output
//! from the exact marginal, and Wasserstein distances under score errors.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::{perturb_model, GmmModel};
use crate::rng::{NormalStream, Purpose};
use crate::schedules::{NoiseSchedule, TimeGrid};
use crate::solver::{sa_solve, SolverConfig};
use crate::stochasticity::TauSchedule;
use crate::verification::stats::{bootstrap_indices, ks_critical, ks_statistic, probe_levels, sorted, w1_against_quantiles};

pub const W1_PROBES: usize = 4096;

#[derive(Clone, Debug, Serialize)]
pub struct KsResult {
    pub tau: String,
    pub n: usize,
    pub ks: f64,
    pub critical: f64,
    pub pass: bool,
}

fn check_scalar(model: &GmmModel) -> Result<()> {
    if model.mixture().dim() != 1 {
        return Err(Error::DimensionError { expected: 1, got: model.mixture().dim() });
    }
    Ok(())
}

/// Draws `n` exact samples of `p_t`.
pub fn sample_marginal(model: &GmmModel, t: f64, seed: u64, n: usize) -> Result<Vec<Vec<f64>>> {
    let s = model.schedule();
    s.check_time(t)?;
    let (alpha, sigma) = (s.alpha(t), s.sigma(t));
    let d = model.mixture().dim();
    Ok(model
        .mixture()
        .sample(seed, n)
        .into_iter()
        .enumerate()
        .map(|(i, x0)| {
            let z = NormalStream::new(seed, Purpose::Scan, i as u64, d).block(0);
            x0.iter().zip(z).map(|(x, z)| alpha * x + sigma * z).collect()
        })
        .collect())
}

/// KS statistic of the sampled marginal at `t_M` for each `τ`.
pub fn marginal_invariance(
    model: &GmmModel,
    taus: &[(String, TauSchedule)],
    grid: &TimeGrid,
    cfg: &SolverConfig,
    n_samples: usize,
) -> Result<Vec<KsResult>> {
    check_scalar(model)?;
    let schedule = *model.schedule();
    let t_end = *grid.times().last().expect("grid has nodes");
    taus.iter()
        .map(|(label, tau)| {
            let run = sa_solve(model, &schedule, tau, grid, cfg, n_samples)?;
            let xs = sorted(run.final_states.into_iter().map(|v| v[0]).collect());
            let ks = ks_statistic(&xs, |x| model.exact_marginal_cdf(t_end, x).expect("checked"));
            let critical = ks_critical(n_samples);
            Ok(KsResult { tau: label.clone(), n: n_samples, ks, critical, pass: ks < critical })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub tau: String,
    pub w1: f64,
    pub w1_se: f64,
    /// `W1(this τ) − W1(first τ)` at the same `ε`, from paired runs.
    pub diff_vs_first: f64,
    pub diff_se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub n_samples: usize,
    pub bootstrap_reps: usize,
}

impl SweepTable {
    pub fn get(&self, epsilon: f64, tau: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.epsilon == epsilon && r.tau == tau)
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// W1 between sampler output under a perturbed score and the exact marginal
/// at `t_M`, for every `(ε, τ)`. Runs at the same `ε` share seeds, so their
/// differences are paired; standard errors come from a paired bootstrap.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_score_sweep(
    base: &GmmModel,
    epsilons: &[f64],
    taus: &[(String, TauSchedule)],
    grid: &TimeGrid,
    cfg: &SolverConfig,
    n_samples: usize,
    perturb_seed: u64,
    bootstrap_reps: usize,
) -> Result<SweepTable> {
    check_scalar(base)?;
    if taus.is_empty() || bootstrap_reps < 2 {
        return Err(Error::InvalidParams("sweep needs at least one tau and two bootstrap replicates".into()));
    }
    let schedule: NoiseSchedule = *base.schedule();
    let t_end = *grid.times().last().expect("grid has nodes");
    let quantiles = probe_levels(W1_PROBES)
        .into_iter()
        .map(|p| base.marginal_quantile(t_end, p))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &eps in epsilons {
        let model = perturb_model(base.clone(), schedule, eps, perturb_seed)?;
        let samples = taus
            .iter()
            .map(|(_, tau)| Ok(sa_solve(&model, &schedule, tau, grid, cfg, n_samples)?.final_states.into_iter().map(|v| v[0]).collect()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let w1: Vec<f64> = samples.iter().map(|s| w1_against_quantiles(&sorted(s.clone()), &quantiles)).collect();
        let boot: Vec<Vec<f64>> = (0..bootstrap_reps as u64)
            .into_par_iter()
            .map(|r| {
                let idx = bootstrap_indices(cfg.seed ^ eps.to_bits(), r, n_samples);
                samples
                    .iter()
                    .map(|s| w1_against_quantiles(&sorted(idx.iter().map(|&i| s[i]).collect()), &quantiles))
                    .collect()
            })
            .collect();
        for (j, (label, _)) in taus.iter().enumerate() {
            let own: Vec<f64> = boot.iter().map(|b| b[j]).collect();
            let diffs: Vec<f64> = boot.iter().map(|b| b[j] - b[0]).collect();
            rows.push(SweepRow {
                epsilon: eps,
                tau: label.clone(),
                w1: w1[j],
                w1_se: std_dev(&own),
                diff_vs_first: w1[j] - w1[0],
                diff_se: if j == 0 { 0.0 } else { std_dev(&diffs) },
            });
        }
    }
    Ok(SweepTable { rows, n_samples, bootstrap_reps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::GaussianMixture;
    use crate::schedules::{make_time_grid, GridKind, GridParams};

    fn bumps(s: NoiseSchedule) -> GmmModel {
        GmmModel::new(GaussianMixture::new(vec![0.5, 0.5], vec![vec![-1.5], vec![1.5]], vec![0.3, 0.3]).unwrap(), s)
    }

    #[test]
    fn exact_samples_pass_ks() {
        let s = NoiseSchedule::vp_cosine();
        let m = bumps(s);
        let n = 100_000;
        let xs = sorted(sample_marginal(&m, 0.4, 21, n).unwrap().into_iter().map(|v| v[0]).collect());
        let ks = ks_statistic(&xs, |x| m.exact_marginal_cdf(0.4, x).unwrap());
        assert!(ks < ks_critical(n), "{ks}");
    }

    #[test]
    fn coarse_grid_large_tau_is_detectably_off() {
        let s = NoiseSchedule::vp_cosine();
        let m = bumps(s);
        let g = make_time_grid(&s, GridKind::UniformLambda, 4, GridParams::default()).unwrap();
        let r = marginal_invariance(&m, &[("1.6".into(), TauSchedule::constant(1.6).unwrap())], &g, &SolverConfig::new(1, 0), 20_000).unwrap();
        assert!(!r[0].pass, "{r:?}");
    }

    #[test]
    fn rejects_two_dimensional_models() {
        let s = NoiseSchedule::vp_cosine();
        let m = GmmModel::new(GaussianMixture::gaussian(vec![0.0, 0.0], 1.0).unwrap(), s);
        let g = make_time_grid(&s, GridKind::UniformLambda, 4, GridParams::default()).unwrap();
        assert!(matches!(
            marginal_invariance(&m, &[("0".into(), TauSchedule::zero())], &g, &SolverConfig::new(1, 0), 10),
            Err(Error::DimensionError { .. })
        ));
    }

    #[test]
    fn sweep_shapes_and_paired_first_row() {
        let s = NoiseSchedule::vp_cosine();
        let m = bumps(s);
        let g = make_time_grid(&s, GridKind::UniformLambda, 20, GridParams::default()).unwrap();
        let taus = vec![("0".to_string(), TauSchedule::zero()), ("1".to_string(), TauSchedule::constant(1.0).unwrap())];
        let t = perturbed_score_sweep(&m, &[0.0, 0.5], &taus, &g, &SolverConfig::new(2, 1), 2000, 3, 10).unwrap();
        assert_eq!(t.rows.len(), 4);
        let first = t.get(0.5, "0").unwrap();
        assert_eq!(first.diff_vs_first, 0.0);
        assert!(t.rows.iter().all(|r| r.w1 > 0.0 && r.w1_se > 0.0));
    }
}
