use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CusumError {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("first regressor column must be the intercept (all ones); row {row} has {value}")]
    MissingIntercept { row: usize, value: f64 },

    #[error("sample size T = {t} is too small for k = {k} regressors (need T > {min})")]
    SampleTooSmall { t: usize, k: usize, min: usize },

    #[error("design matrix never reaches full rank")]
    RankDeficient,

    #[error("residual variance estimate is zero (exact fit)")]
    DegenerateVariance,

    #[error("ill-conditioned second-moment matrix (eigenvalue {eigenvalue:e} below tolerance)")]
    IllConditioned { eigenvalue: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("projection matrix does not have orthonormal columns (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("invalid boundary: {0}")]
    InvalidBoundary(String),

    #[error("negative boundary argument r = {0}")]
    NegativeArgument(f64),

    #[error("no tabulated critical value for {0}")]
    UnknownCriticalValue(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("monitoring horizon exhausted at t = {t} (endpoint {endpoint})")]
    HorizonExhausted { t: usize, endpoint: usize },

    #[error("monitor retention cap of {cap} observations exceeded")]
    CapacityExceeded { cap: usize },

    #[error("no admissible index for the estimator: {0}")]
    EmptyRange(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CusumError {
    fn from(e: std::io::Error) -> Self {
        CusumError::Io(e.to_string())
    }
}

impl From<csv::Error> for CusumError {
    fn from(e: csv::Error) -> Self {
        CusumError::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for CusumError {
    fn from(e: serde_json::Error) -> Self {
        CusumError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CusumError>;
