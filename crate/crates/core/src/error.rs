//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration document failed validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// A check was asked to run on an input where its defining quantity
    /// degenerates (zero matrix, zero gradient, iterate at the minimizer).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The optimizer produced a non-finite or runaway iterate. Carries the
    /// partial trace accumulated up to the offending step.
    #[error("divergence at iteration {iter}: {detail}")]
    Divergence {
        iter: u64,
        detail: String,
        trace: Box<crate::optimizer::RunTrace>,
    },

    /// A diagnostics quantity needed by a downstream formula is unusable.
    #[error("diagnostics error: {0}")]
    Diagnostics(String),

    #[error("linear algebra backend error: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
