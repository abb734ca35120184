use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("referential error: {0}")]
    Referential(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("column `{0}` is constant and cannot be standardized")]
    ConstantColumn(String),

    #[error("design matrix is rank deficient; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("local fit at unit {unit} is rank deficient")]
    LocalRankDeficient { unit: String },

    #[error("bandwidth {k} too small: n - 2 - tr(S) = {slack}")]
    BandwidthTooSmall { k: usize, slack: f64 },

    #[error("bandwidth search failed: {0}")]
    SearchFailed(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. }
            | Error::Schema(_)
            | Error::Referential(_)
            | Error::Geometry(_)
            | Error::Parameter(_) => ErrorKind::Validation,
            Error::Degenerate(_)
            | Error::ConstantColumn(_)
            | Error::RankDeficient { .. }
            | Error::LocalRankDeficient { .. }
            | Error::BandwidthTooSmall { .. }
            | Error::SearchFailed(_)
            | Error::Diverged { .. } => ErrorKind::Numerical,
            Error::Io { .. } | Error::Json { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
