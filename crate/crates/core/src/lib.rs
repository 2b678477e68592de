//! Stochastic Adams solvers for diffusion SDEs with a tunable noise level.

pub mod cli;
pub mod coefficients;
pub mod error;
pub mod rng;
pub mod schedules;
pub mod solver;
pub mod oracle;
pub mod stochasticity;
pub mod verification;

pub use error::{Error, Result};
