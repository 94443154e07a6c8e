use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("enumeration budget exceeded: K^n = {k}^{n} > {limit} labelings")]
    Budget { k: usize, n: usize, limit: u64 },

    #[error("exhaustive permutation search limited to K <= 8, got K = {0}")]
    TooManyClasses(usize),

    #[error("empty block: class {0} has no members")]
    EmptyBlock(usize),

    #[error("singular covariance: {0}")]
    Singular(String),

    #[error("all {restarts} restarts degenerate: {diagnostics}")]
    AllRestartsFailed { restarts: usize, diagnostics: String },

    #[error("{failed} of {total} replicates failed (limit {limit_pct}%)")]
    ReplicateFailures {
        failed: usize,
        total: usize,
        limit_pct: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
