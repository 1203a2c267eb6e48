use thiserror::Error;

/// Errors raised by model ingestion, the solvers and the simulators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("dimension mismatch for `{key}`: expected {expected}, found {found}")]
    Dimension {
        key: String,
        expected: String,
        found: String,
    },

    #[error("non-finite entry in `{0}`")]
    NonFinite(String),

    #[error("coefficient `{key}` is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { key: String, asymmetry: f64 },

    #[error("time {t} outside the horizon [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("condition (H) violated: {0}")]
    ConditionH(String),

    #[error("block {block} singular at t = {t} (eigenvalues {eigenvalues:?})")]
    Singular {
        block: &'static str,
        t: f64,
        eigenvalues: Vec<f64>,
    },

    #[error("divergence after t = {last_valid_t} (step {step})")]
    Divergence { step: usize, last_valid_t: f64 },

    #[error("{what} is not positive definite at t = {t}")]
    Definiteness { what: &'static str, t: f64 },

    #[error("Gibbs map degenerate at state node {node}: every cell underflowed")]
    DegenerateMap { node: usize },

    #[error("policy moments error: {0}")]
    Moments(String),

    #[error("integration error: {0}")]
    Integration(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("regression needs at least {needed} points, got {got}")]
    Fit { needed: usize, got: usize },

    #[error("study inconclusive: {0}")]
    Inconclusive(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
