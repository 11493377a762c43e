//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A reduction (log-sum-exp, mean, ...) was asked for on no elements.
    #[error("empty reduction")]
    EmptyReduction,

    /// NaN or +inf where a finite value (or -inf) was required.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The cavity construction produced a non-normalisable density.
    #[error("Z_q infinite")]
    CavityNotNormalisable,

    /// A natural-parameter combination left the normalisable family.
    #[error("non-normalisable exponential-family parameters: {0}")]
    NotNormalisable(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    /// Training or an iterative solver diverged. Carries a short trace.
    #[error("diverged: {0}")]
    Diverged(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
