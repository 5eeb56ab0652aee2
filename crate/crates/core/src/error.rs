use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("model fit failed: {0}")]
    Fit(String),

    #[error("IRLS did not converge after {iterations} iterations (last deviance {deviance})")]
    NonConvergence { iterations: usize, deviance: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
