use thiserror::Error;

use crate::backend::BackendError;
use crate::tensor::TensorError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("ensemble has {found} member(s), at least {required} required")]
    InsufficientEnsemble { required: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Contextual improvement divides by the incumbent; a non-positive one
    /// leaves the exploration rate undefined.
    #[error("contextual improvement undefined: incumbent E+ = {incumbent} is not positive")]
    DegenerateContext { incumbent: f64 },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("backend failure at step {step}: {source}")]
    BackendAtStep {
        step: usize,
        #[source]
        source: BackendError,
    },

    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Whether the failure came from the classifier backend.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_) | Error::BackendAtStep { .. })
    }
}
