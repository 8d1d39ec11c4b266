use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric ({context}): max |A - Aᵀ| = {asymmetry:e}")]
    NotSymmetric { context: String, asymmetry: f64 },

    #[error("adjacency entry ({row}, {col}) = {value} is not binary")]
    NonBinaryAdjacency { row: usize, col: usize, value: f64 },

    #[error("subject {subject}: window {window}, ROI {roi} has zero variance")]
    ZeroVariance {
        subject: String,
        window: usize,
        roi: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error(
        "Procrustes target is rank deficient (σ_min / σ_max = {ratio:e}); \
         enable basis completion to proceed"
    )]
    RankDeficient { ratio: f64 },

    #[error("QP did not converge after {iterations} iterations (KKT residual {residual:e})")]
    QpNotConverged { iterations: usize, residual: f64 },

    #[error("QP objective is unbounded below on the feasible set")]
    QpUnbounded,

    #[error("training diverged at outer iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn dims(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
