use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model `{label}` is not ergodic: {reason}")]
    NonErgodicModel { label: String, reason: String },

    #[error("time step {dt} is coarser than the step rule allows (dt <= {max_dt} for T = {horizon})")]
    StepTooCoarse { dt: f64, max_dt: f64, horizon: f64 },

    #[error("grid too narrow: {0}")]
    GridTooNarrow(String),

    #[error("ECF stride {stride} with dt = {dt} exceeds the subsampling limit {limit}")]
    StrideTooCoarse { stride: usize, dt: f64, limit: f64 },

    #[error("the unbiased |phi|^2 estimate is undefined at lambda = 0")]
    ZeroLambda,

    #[error("lambda = {0} is not a point of the ECF grid")]
    OffGrid(f64),

    #[error("time horizon T = {0} is too small to build a candidate grid")]
    TimeHorizonTooSmall(f64),

    #[error("ECF table was not built from this path: {0}")]
    EcfMismatch(String),

    #[error("evaluation grid mismatch: {0}")]
    GridMismatch(String),

    #[error("rate fit needs at least 3 distinct horizons, got {0}")]
    InsufficientPoints(usize),

    #[error("numerical check failed: {0}")]
    Unresolved(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown model `{0}` (built-in models: ou, quartic, ou-varsigma)")]
    UnknownModel(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
