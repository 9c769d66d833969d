use thiserror::Error;

/// Error type shared across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, including shape mismatches in tensor ops.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid input supplied to an operation.
    #[error("input error: {0}")]
    Input(String),

    /// API misuse, e.g. running backward twice on the same graph.
    #[error("usage error: {0}")]
    Usage(String),

    /// Lookup of an unknown unit, task or parameter.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// Malformed or inconsistent persisted data.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite value encountered during training.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Correlation undefined (constant input vector).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// A pipeline stage was invoked before its prerequisite.
    #[error("dependency error: run `{prerequisite}` first ({detail})")]
    Dependency { prerequisite: String, detail: String },

    /// A stored artifact no longer matches its recorded fingerprint.
    #[error("staleness error: {0}")]
    Stale(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for config problems, 3 for
    /// missing stage dependencies, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 2,
            Error::Dependency { .. } | Error::Stale(_) => 3,
            _ => 1,
        }
    }
}
