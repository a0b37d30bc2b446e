use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the pipeline.
///
/// Variants group into three families that the command line maps onto
/// distinct exit codes: invalid input (`Config`, `Argument`, `Range`),
/// data or format problems (`Format`, `Version`, `Schema`, `Io`) and
/// numeric failures (`NonFinite`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("format error in {path:?} at byte {offset}: {message}")]
    Format {
        path: Option<PathBuf>,
        offset: u64,
        message: String,
    },

    #[error("schema error at `{location}`: {message}")]
    Schema { location: String, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("non-finite loss at step {}: {}", .0.step, .0.reason)]
    NonFinite(Box<NumericDump>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Training state captured when a loss or gradient stops being finite.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NumericDump {
    pub phase: String,
    pub step: usize,
    pub epoch: usize,
    pub reason: String,
    pub last_losses: Vec<f64>,
    pub param_norms: Vec<(String, f64)>,
}

impl Error {
    /// Process exit code: 2 invalid input, 3 data or format, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Range(_) => 2,
            Error::Format { .. } | Error::Schema { .. } | Error::Version { .. } | Error::Io(_) => 3,
            Error::NonFinite(_) => 4,
        }
    }

    pub(crate) fn format(path: Option<&std::path::Path>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.map(|p| p.to_path_buf()),
            offset,
            message: message.into(),
        }
    }
}
