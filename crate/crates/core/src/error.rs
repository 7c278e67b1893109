use thiserror::Error;

/// Errors raised while building models or running checks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid scalar function: {0}")]
    InvalidFunction(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dimension {dim} exceeds the quadrature limit of {max}; use the sampler")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("measure is not well-defined: {0}")]
    UndefinedMeasure(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
