use thiserror::Error;

use crate::recommend::RecommendationSet;

/// Errors produced anywhere in the material synthesis pipeline.
#[derive(Debug, Error)]
pub enum GmsError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("covariance matrix is not positive definite (largest jitter tried: {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("insufficient samples for {context}: need at least {required}, have {actual}")]
    InsufficientSamples {
        context: String,
        required: usize,
        actual: usize,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error(
        "recommendation budget exhausted after {} accepted items (acceptance rate {:.3e})",
        partial.items.len(),
        partial.acceptance_rate
    )]
    BudgetExhausted { partial: Box<RecommendationSet> },

    #[error("undefined distribution: {0}")]
    UndefinedDistribution(String),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("model not fitted: {0}")]
    NotFitted(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GmsError>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(GmsError::DimensionMismatch { expected, actual })
    }
}
