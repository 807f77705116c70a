use std::path::PathBuf;

use thiserror::Error;

/// Failure classes shared by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no MRI landmark matches TRUS slice {0}")]
    UnmatchedSlice(i32),
    #[error("spacing mismatch: {0} vs {1} mm")]
    SpacingMismatch(f64, f64),
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse grouping used for process exit codes and HTTP status mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Parse,
    Numeric,
    Precondition,
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "EmptyInput",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::NonFinite(_) => "NonFinite",
            Error::DegeneratePolygon(_) => "DegeneratePolygon",
            Error::InvalidInput(_) => "InvalidInput",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::UnmatchedSlice(_) => "UnmatchedSlice",
            Error::SpacingMismatch(..) => "SpacingMismatch",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::Parse { .. } => "ParseError",
            Error::Io { .. } => "IoError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. } | Error::Io { .. } => ErrorClass::Parse,
            Error::NonFinite(_) => ErrorClass::Numeric,
            _ => ErrorClass::Precondition,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
