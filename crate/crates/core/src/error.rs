use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the optimization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("duplicate gene id `{0}`")]
    DuplicateId(String),

    #[error("{path}: line {line} has {found} fields, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        found: usize,
        expected: usize,
    },

    #[error("duplicate pathway `{0}`")]
    DuplicatePathway(String),

    #[error("gene pools do not intersect: no id is present in every modality and in the labels")]
    EmptyIntersection,

    #[error("unknown modality `{0}`")]
    UnknownModality(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("feature width mismatch: model trained on {expected} columns, got {found}")]
    WidthMismatch { expected: usize, found: usize },

    #[error("Cholesky factorization failed after jitter escalation (final jitter {jitter:e})")]
    Cholesky { jitter: f64 },

    #[error("ensemble member {member} produced a non-finite loss at epoch {epoch}")]
    NonFiniteLoss { member: usize, epoch: usize },

    #[error("ids are not aligned between {0}")]
    Misaligned(&'static str),

    #[error("surrogate failure at cycle {cycle}: {source}")]
    Surrogate {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
