//! Classifier backends queried by the fidelity metrics.

mod builtin;
mod external;
pub mod protocol;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Image;

pub use builtin::{LinearEvidence, MatchFraction, SyntheticModelSpec};
pub use external::{ExternalBackend, DEFAULT_TIMEOUT};

/// Tolerance on the probability sum of externally produced vectors.
pub const EXTERNAL_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("input shape mismatch: model expects {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },

    #[error("malformed response: {0}")]
    Malformed(String),

    #[error("probability vector {index} sums to {sum}")]
    ProbabilitySum { index: usize, sum: f64 },

    #[error("invalid probability vector {index}: {reason}")]
    InvalidProbabilities { index: usize, reason: String },

    #[error("backend timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("backend channel closed")]
    Closed,

    #[error("backend reported error: {0}")]
    Remote(String),

    #[error("backend I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid backend configuration: {0}")]
    Config(String),
}

/// Class count and expected input shape (height, width, channels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub classes: usize,
    pub shape: [usize; 3],
}

impl BackendInfo {
    pub fn shape_tuple(&self) -> (usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2])
    }
}

/// A classifier mapping a batch of images to per-class probabilities.
///
/// Implementations must be stateless between calls: equal inputs give
/// equal outputs. Vector `i` of the result answers image `i` of the batch.
pub trait ModelBackend: Send + Sync {
    fn info(&self) -> BackendInfo;

    fn predict(&self, batch: &[Image]) -> Result<Vec<Vec<f64>>, BackendError>;
}

impl<T: ModelBackend + ?Sized> ModelBackend for Box<T> {
    fn info(&self) -> BackendInfo {
        (**self).info()
    }

    fn predict(&self, batch: &[Image]) -> Result<Vec<Vec<f64>>, BackendError> {
        (**self).predict(batch)
    }
}

pub(crate) fn check_shapes(info: &BackendInfo, batch: &[Image]) -> Result<(), BackendError> {
    let expected = info.shape_tuple();
    match batch.iter().find(|img| img.shape() != expected) {
        Some(img) => Err(BackendError::ShapeMismatch {
            expected,
            found: img.shape(),
        }),
        None => Ok(()),
    }
}

/// Checks count, length, range and sum of returned probability vectors.
pub fn validate_probabilities(
    probs: &[Vec<f64>],
    expected_len: usize,
    classes: usize,
    sum_tolerance: f64,
) -> Result<(), BackendError> {
    if probs.len() != expected_len {
        return Err(BackendError::Malformed(format!(
            "expected {expected_len} probability vectors, got {}",
            probs.len()
        )));
    }
    for (index, p) in probs.iter().enumerate() {
        if p.len() != classes {
            return Err(BackendError::InvalidProbabilities {
                index,
                reason: format!("length {} != class count {classes}", p.len()),
            });
        }
        if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0) {
            return Err(BackendError::InvalidProbabilities {
                index,
                reason: format!("entry {x} outside [0, 1]"),
            });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > sum_tolerance {
            return Err(BackendError::ProbabilitySum { index, sum });
        }
    }
    Ok(())
}
