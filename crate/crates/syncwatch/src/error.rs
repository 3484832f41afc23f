//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by feature construction, model evaluation, training,
/// scoring, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value at row {row}, column {col}: {value}")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid distribution row {row}: sum {sum} departs from 1 by more than {tol}")]
    InvalidDistribution { row: usize, sum: f64, tol: f64 },

    #[error("delay offset {offset} at frame {frame} outside [-{tau}, {tau}]")]
    OffsetOutOfRange { frame: usize, offset: i64, tau: usize },

    #[error("rank-deficient covariance: only {achievable} positive eigenvalues, requested {requested}")]
    RankDeficient { achievable: usize, requested: usize },

    #[error("need at least {needed} distinct values for k-means, got {got}")]
    TooFewDistinct { needed: usize, got: usize },

    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("feature set {feature} cannot be trained with loss {loss}")]
    InvalidPairing { feature: String, loss: String },

    #[error("feature kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: String, got: String },

    #[error("no real training data: manifest has no records with label 0")]
    NoRealData,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("code {code} at cell ({row}, {col}) outside codebook of size {k}")]
    CodeOutOfRange { row: usize, col: usize, code: usize, k: usize },

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an I/O error with the path or action it concerns.
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Exit code class for the CLI: 1 usage error, 2 data error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidPairing { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
