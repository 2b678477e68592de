//! DDIM-η trajectories against the one-step predictor with the matching `τ`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::oracle::DataPredictionModel;
use crate::schedules::{NoiseSchedule, TimeGrid};
use crate::solver::{ddim_path, sa_solve, SolverConfig};
use crate::stochasticity::ddim_equivalent_tau;

pub const DDIM_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct DdimComparison {
    pub eta: f64,
    pub batch: usize,
    /// Largest `|x_ddim − x_sa|` over samples and coordinates at each node.
    pub per_node: Vec<f64>,
    pub max_deviation: f64,
    pub pass: bool,
}

/// Runs both samplers on shared noise and compares every state.
pub fn ddim_equivalence<M: DataPredictionModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    eta: f64,
    batch: usize,
    seed: u64,
) -> Result<DdimComparison> {
    let tau = ddim_equivalent_tau(eta, schedule, grid)?;
    let cfg = SolverConfig { seed, record_trajectory: true, ..SolverConfig::new(1, 0) };
    let run = sa_solve(model, schedule, &tau, grid, &cfg, batch)?;
    let paths = run.paths.expect("trajectories were requested");
    let per_sample = (0..batch)
        .into_par_iter()
        .map(|i| {
            let dd = ddim_path(model, schedule, grid, eta, seed, i as u64)?;
            Ok(dd
                .iter()
                .zip(&paths[i].states)
                .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let per_node: Vec<f64> =
        (0..grid.times().len()).map(|k| per_sample.iter().map(|d| d[k]).fold(0.0, f64::max)).collect();
    let max_deviation = per_node.iter().copied().fold(0.0, f64::max);
    Ok(DdimComparison { eta, batch, per_node, max_deviation, pass: max_deviation <= DDIM_TOLERANCE })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{GaussianMixture, GmmModel};
    use crate::schedules::{make_time_grid, GridKind, GridParams};

    #[test]
    fn trajectories_agree() {
        let s = NoiseSchedule::vp_linear(0.1, 20.0).unwrap();
        let m = GmmModel::new(GaussianMixture::new(vec![0.3, 0.7], vec![vec![-1.0], vec![2.0]], vec![0.2, 0.4]).unwrap(), s);
        let g = make_time_grid(&s, GridKind::UniformT, 16, GridParams::default()).unwrap();
        for eta in [0.0, 0.37, 1.0] {
            let r = ddim_equivalence(&m, &s, &g, eta, 32, 9).unwrap();
            assert!(r.pass, "{r:?}");
            assert_eq!(r.per_node[0], 0.0);
        }
    }

    #[test]
    fn ve_is_rejected() {
        let s = NoiseSchedule::ve(0.02, 80.0).unwrap();
        let m = GmmModel::new(GaussianMixture::gaussian(vec![0.0], 1.0).unwrap(), s);
        let g = make_time_grid(&s, GridKind::UniformT, 4, GridParams::default()).unwrap();
        assert!(ddim_equivalence(&m, &s, &g, 0.5, 2, 1).is_err());
    }
}
