use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure surfaced by the library.
///
/// File-format problems carry the offending path and, for line-oriented
/// formats, the 1-based line number.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic string (expected SASVEMB1 binary or TSV text)")]
    BadMagic { path: PathBuf },

    #[error("{path}: truncated embedding file ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("{path}: embedding '{id}' has dimension {found}, expected {expected}")]
    DimensionMismatch {
        path: PathBuf,
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("{path}: duplicate id '{id}'")]
    DuplicateId { path: PathBuf, id: String },

    #[error("{path}: embedding '{id}' contains a non-finite value")]
    NonFinite { path: PathBuf, id: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: unknown trial label '{token}' (expected target, nontarget or spoof)")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        token: String,
    },

    #[error("{path}:{line}: duplicate entry '{entry}'")]
    DuplicateEntry {
        path: PathBuf,
        line: usize,
        entry: String,
    },

    #[error("{path}: no records")]
    EmptyProtocol { path: PathBuf },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },

    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),

    #[error("trial {index}: unresolved {what} '{id}'")]
    Unresolved {
        index: usize,
        what: &'static str,
        id: String,
    },

    #[error("calibrator needs both target and non-target scores")]
    SingleClass,

    #[error("calibrator did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("non-finite score at position {0}")]
    NonFiniteScore(usize),

    #[error("trial {0} is unlabeled")]
    Unlabeled(usize),

    #[error("cannot sample {0} pairs: {1}")]
    Sampling(&'static str, String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
