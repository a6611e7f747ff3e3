use std::path::PathBuf;

use thiserror::Error;

/// Broad failure classes. The CLI maps these onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("matrix is not a rotation (orthonormality deviation {deviation:.3e})")]
    NotARotation { deviation: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("degenerate scale factor: percentile magnitude is zero")]
    DegenerateScale,

    #[error("nothing to score: no valid pixels")]
    Unscorable,

    #[error("signal has zero power")]
    ZeroPower,

    #[error("no {0} samples available for the requested training phase")]
    EmptyPool(&'static str),

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => ErrorClass::Usage,
            Error::NonFinite(_)
            | Error::NotARotation { .. }
            | Error::DegenerateScale
            | Error::Unscorable
            | Error::ZeroPower => ErrorClass::Numerical,
            Error::EmptyPool(_)
            | Error::MissingPrerequisite(_)
            | Error::Format { .. }
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::Image { .. } => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
