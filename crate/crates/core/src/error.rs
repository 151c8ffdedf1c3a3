use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration values (dimensions, hyperparameters, missing masks).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical error{}: {message}", example.map(|id| format!(" (example {id})")).unwrap_or_default())]
    Numerical { example: Option<u64>, message: String },

    #[error("training diverged at epoch {epoch}, step {step}: {message}")]
    Training { epoch: usize, step: usize, message: String },

    #[error("format error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Format { row: Option<usize>, message: String },

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("cosine similarity undefined: {0}")]
    UndefinedSimilarity(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    /// An upstream artifact is absent; `producer` names the command that makes it.
    #[error("missing dependency {missing}: run `{producer}` first")]
    Dependency { missing: String, producer: String },

    #[error("stale cache in {}: expected input hash {expected}, found {found} (rerun with --force to invalidate)", dir.display())]
    StaleCache { dir: PathBuf, expected: String, found: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Format { row, message: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Config(_) | Error::StaleCache { .. } => 2,
            Error::Dependency { .. } => 3,
            _ => 1,
        }
    }
}
