use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants group into three families that the CLI maps to exit codes:
/// configuration (2), data handling (3), and numeric failures (4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("stale cache {path}: {reason}; re-run preprocessing to rebuild")]
    StaleCache { path: PathBuf, reason: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate input in {op}: {msg}")]
    Degenerate { op: &'static str, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::StaleCache { .. } | Error::Io(_) => 3,
            Error::Shape { .. } | Error::Degenerate { .. } | Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
