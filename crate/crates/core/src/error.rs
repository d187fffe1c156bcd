use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance factorization failed at pivot {pivot}")]
    Factorization { pivot: usize },

    #[error("ill-conditioned basis {basis}: condition estimate {condition:e}")]
    IllConditioned { basis: String, condition: f64 },

    #[error("no information at t = {0}")]
    NoInformation(f64),

    #[error("nonpositive sigma {value} at t = {t}")]
    NonPositiveSigma { t: f64, value: f64 },

    #[error("degenerate posterior: mass underflows, nearer endpoint {endpoint}")]
    DegeneratePosterior { endpoint: f64 },

    #[error("lattice too coarse: {0}")]
    LatticeTooCoarse(String),

    #[error("replication {replication} failed: {source}")]
    Replication {
        replication: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} replications failed (first: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
