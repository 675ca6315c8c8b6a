use thiserror::Error;

/// Errors raised while constructing or validating model data.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("non-finite input to {0}")]
    Domain(&'static str),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid supply schedule: {0}")]
    Supply(String),
    #[error("invalid density: {0}")]
    Density(String),
}

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::Parameter {
        name,
        reason: reason.into(),
    }
}
