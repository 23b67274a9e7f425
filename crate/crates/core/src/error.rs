//! Error type shared by every stage of the reconstruction pipeline.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller passed a value outside the documented range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An input image, map or file did not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A byte-level parse failure, with the offset where it was detected.
    #[error("format error at byte {offset}: {message}")]
    FormatAt { offset: usize, message: String },

    /// Numerical content violates an invariant (non-positive depth, NaN, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Not enough jointly valid samples to run an estimator.
    #[error("insufficient data: {needed} valid samples required, {found} found")]
    InsufficientData { needed: usize, found: usize },

    /// A depth provider failed to produce a map for a request.
    #[error("provider error for request `{request_id}`: {message}")]
    Provider { request_id: String, message: String },

    /// A pipeline stage failed; wraps the underlying cause.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 usage, 3 data/format, 4 provider, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 2,
            Error::Format(_)
            | Error::FormatAt { .. }
            | Error::Data(_)
            | Error::InsufficientData { .. }
            | Error::Image(_)
            | Error::Json(_) => 3,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Io { .. } => 3,
            Error::Provider { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Internal(_) => 5,
        }
    }
}
