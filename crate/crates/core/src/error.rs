use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not SPD: smallest eigenvalue {min_eig:e} <= tolerance {tol:e}")]
    NotSpd { min_eig: f64, tol: f64 },

    #[error("matrix exponential overflow: eigenvalue {0} exceeds cap")]
    Overflow(f64),

    #[error("vector length {0} is not a triangular number N(N+1)/2")]
    BadLength(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid degrees of freedom: {0}")]
    BadDof(String),

    #[error("probability {0} outside (0, 1)")]
    BadProb(f64),

    #[error("too few samples per site: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("sample size n = {n} too small: {why}")]
    BadN { n: usize, why: &'static str },

    #[error("scatter matrix of site {0} is singular")]
    SingularScatter(usize),

    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),

    #[error("optimizer failed: {0}")]
    OptFailed(String),

    #[error("pooled scatter matrix of site {0} is singular")]
    SingularPooled(usize),

    #[error("Poisson IRLS diverged: {0}")]
    IrlsDiverged(String),

    #[error("all observations are equal; density support is degenerate")]
    DegenerateSupport,

    #[error("Tweedie denominator 1 + 2 l'(y) = {0:e} too close to zero")]
    DenominatorNearZero(f64),

    #[error("bad magic: expected SPDF1, found {0:?}")]
    BadMagic(String),

    #[error("corrupt record {index}: {why}")]
    CorruptRecord { index: usize, why: String },

    #[error("matrix at site {site}, observation {obs} is not SPD (smallest eigenvalue {min_eig:e})")]
    NotSpdRecord { site: usize, obs: usize, min_eig: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
