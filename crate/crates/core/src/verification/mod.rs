//! Measurements that turn the solver's theoretical properties into
//! pass/fail checks: strong convergence orders, marginal invariance across
//! `τ`, injected-noise variances, and the perturbed-score experiment.

pub mod brownian;
pub mod convergence;
pub mod ddim;
pub mod inequality;
pub mod marginals;
pub mod stats;

pub use brownian::{ito_noise_from_path, ito_variance_check, BrownianPath, VarianceCheck};
pub use convergence::{strong_order, ConvergenceReport, ConvergenceSetup};
pub use ddim::{ddim_equivalence, DdimComparison};
pub use inequality::{variance_inequality_scan, InequalityReport};
pub use marginals::{marginal_invariance, perturbed_score_sweep, sample_marginal, KsResult, SweepRow, SweepTable};
