//! Error type shared by every workbench module.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Stable machine-readable error code. The HTTP layer maps each code to
/// exactly one status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    NotFound,
    InvalidInput,
    InvalidParam,
    InvalidPatch,
    LogOrderViolation,
    UnsupportedFormat,
    CorruptModel,
    DanglingReference,
    InsufficientCheckpoints,
    Busy,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::NotFound => "NotFound",
            ErrorCode::InvalidInput => "InvalidInput",
            ErrorCode::InvalidParam => "InvalidParam",
            ErrorCode::InvalidPatch => "InvalidPatch",
            ErrorCode::LogOrderViolation => "LogOrderViolation",
            ErrorCode::UnsupportedFormat => "UnsupportedFormat",
            ErrorCode::CorruptModel => "CorruptModel",
            ErrorCode::DanglingReference => "DanglingReference",
            ErrorCode::InsufficientCheckpoints => "InsufficientCheckpoints",
            ErrorCode::Busy => "Busy",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("log order violation: step {step} does not follow last logged step {last}")]
    LogOrderViolation { step: u64, last: u64 },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("insufficient checkpoints: need at least {needed}, found {found}")]
    InsufficientCheckpoints { needed: usize, found: usize },
    #[error("busy: {0}")]
    Busy(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::NotFound(_) => ErrorCode::NotFound,
            Error::InvalidInput(_) => ErrorCode::InvalidInput,
            Error::InvalidParam(_) => ErrorCode::InvalidParam,
            Error::InvalidPatch(_) => ErrorCode::InvalidPatch,
            Error::LogOrderViolation { .. } => ErrorCode::LogOrderViolation,
            Error::UnsupportedFormat(_) => ErrorCode::UnsupportedFormat,
            Error::CorruptModel(_) => ErrorCode::CorruptModel,
            Error::DanglingReference(_) => ErrorCode::DanglingReference,
            Error::InsufficientCheckpoints { .. } => ErrorCode::InsufficientCheckpoints,
            Error::Busy(_) => ErrorCode::Busy,
            // Filesystem failures surface as bad input at the API boundary.
            Error::Io { .. } => ErrorCode::InvalidInput,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
