use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library.
///
/// Variants are grouped so front ends can map them onto exit codes:
/// shape/argument problems, data and file problems, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("metric is undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("unsupported model file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch in {path}")]
    Checksum { path: PathBuf },

    #[error("invalid cost matrix: {0}")]
    CostMatrix(String),

    #[error("lowered convolution needs {needed} parameters, budget is {budget}")]
    MemoryBudget { needed: usize, budget: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by input files or datasets rather than arguments.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Malformed { .. }
                | Error::VersionMismatch { .. }
                | Error::Checksum { .. }
                | Error::CostMatrix(_)
                | Error::Io { .. }
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Diverged { .. })
    }
}
