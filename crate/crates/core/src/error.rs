use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("time to horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),

    #[error("driver is not the pure power driver: {0}")]
    NotPurePower(String),

    #[error("memory budget exceeded: {requested} values requested, budget is {budget}")]
    Resource { requested: usize, budget: usize },

    #[error("exit times are absent; run exit detection first")]
    ExitTimesMissing,

    #[error("implicit solve did not converge at node {node}, path {path} after {iterations} iterations")]
    Convergence {
        node: usize,
        path: usize,
        iterations: usize,
    },

    #[error("event `{event}` has {count} paths, at least {required} required")]
    InsufficientEvent {
        event: String,
        count: usize,
        required: usize,
    },

    #[error("fewer than 10^3 exit events ({0} observed)")]
    TooFewExits(usize),

    #[error("integrability check failed: {0}")]
    Integrability(String),

    #[error("PDE instability: density reached {value:e} at s = {time}")]
    Instability { value: f64, time: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("series truncation bound {bound:e} exceeds 1e-6 at s = {elapsed}")]
    SeriesTruncation { bound: f64, elapsed: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
