use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension {0}")]
    InvalidDimension(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate instance from seed {seed}: {detail}")]
    DegenerateInstance { seed: u64, detail: String },

    #[error("resolvent pole at gamma = {gamma}: {detail}")]
    ResolventPole { gamma: f64, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rank-one update is singular (denominator {0:e})")]
    RankOneSingular(f64),

    #[error("query budget exhausted after {0} queries")]
    BudgetExhausted(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver diverged after {queries} queries (relative residual {residual:e})")]
    Diverged { queries: usize, residual: f64 },

    #[error("conjugate gradient breakdown: p'Ap = {0:e}, matrix is not positive definite")]
    Breakdown(f64),

    #[error("estimate is the zero vector, direction undefined")]
    ZeroEstimate,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("refusing to emit an empty record set")]
    EmptyRecords,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
