use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("population is empty")]
    EmptyPopulation,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("design grammar error at '{token}': {message}")]
    Grammar { token: String, message: String },

    #[error("{operation} is not supported for {design} designs")]
    Unsupported { operation: String, design: String },

    #[error("design support error: {0}")]
    Support(String),

    #[error("{what} is singular or ill-conditioned (condition estimate {condition:.3e})")]
    RankDeficient { what: String, condition: f64 },

    #[error("enumeration would visit about {count:.4e} samples, above the cap of {cap}")]
    EnumerationCap { count: f64, cap: u64 },

    #[error("{failed} of {total} replications failed ({summary})")]
    ReplicationFailures {
        failed: usize,
        total: usize,
        summary: String,
    },
}

impl Error {
    /// Short stable tag used when tallying per-replication failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::EmptyPopulation => "empty_population",
            Error::Argument(_) => "argument",
            Error::Configuration(_) => "configuration",
            Error::Grammar { .. } => "grammar",
            Error::Unsupported { .. } => "unsupported",
            Error::Support(_) => "support",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::EnumerationCap { .. } => "enumeration_cap",
            Error::ReplicationFailures { .. } => "replication_failures",
        }
    }

    pub(crate) fn unsupported(operation: &str, design: &str) -> Self {
        Error::Unsupported {
            operation: operation.to_string(),
            design: design.to_string(),
        }
    }
}
