use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or violated precondition on a setting.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed caller input (shape mismatch, label out of range, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Values that violate a data contract, e.g. a pixel outside [0,1].
    #[error("data error: {0}")]
    Data(String),

    /// A file that does not follow one of the binary container layouts.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Operation called on an object that is not ready for it.
    #[error("state error: {0}")]
    State(String),

    /// A metric that is undefined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A pipeline stage failed; carries the stage name.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 configuration, 3 data/format, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::State(_) | Error::UndefinedMetric(_) => 2,
            Error::Data(_) | Error::Format { .. } | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
