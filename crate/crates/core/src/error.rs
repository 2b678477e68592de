use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time {t} outside schedule domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("value {value} outside attainable range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid eta {eta}: log argument {arg} is not positive")]
    InvalidEta { eta: f64, arg: f64 },
    #[error("interpolation nodes {a} and {b} are (nearly) coincident")]
    DegenerateNodes { a: f64, b: f64 },
    #[error("step {step} needs {needed} buffered evaluations, {available} available")]
    InsufficientHistory { step: usize, needed: usize, available: usize },
    #[error("tau is not constant on the step [{t_next}, {t_i}]")]
    NonConstantTau { t_i: f64, t_next: f64 },
    #[error("operation requires a variance-preserving schedule")]
    NonVpSchedule,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },
    #[error("time grid has {0} nodes, need at least 2")]
    GridTooShort(usize),
    #[error("interval [{t_next}, {t_i}] is not covered by the Brownian path nodes")]
    PathCoverage { t_i: f64, t_next: f64 },
    #[error("strong-order reference requires a model affine in the state")]
    NonAffineModel,
    #[error("need at least {needed} refinement levels, got {got}")]
    InsufficientLevels { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
