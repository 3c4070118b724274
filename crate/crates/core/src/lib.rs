//! Aggregation of saliency-map ensembles and insertion/deletion fidelity
//! evaluation.
//!
//! The crate consumes precomputed attribution maps (TNSR files), normalizes
//! and merges them with one of ten aggregation operators, and scores the
//! result with the insertion and deletion metrics against a pluggable
//! classifier backend.

pub mod aggregation;
pub mod backend;
pub mod cli;
pub mod error;
pub mod fidelity;
pub mod normal;
pub mod normalization;
pub mod synthetic;
pub mod tensor;
pub mod types;

pub use aggregation::{aggregate, AggregationSpec, PixelStats};
pub use backend::{BackendError, BackendInfo, ModelBackend};
pub use error::{Error, Result};
pub use fidelity::{BaselineSpec, Direction, FidelityCurve, MetricConfig, TieBreak};
pub use normalization::NormalizationKind;
pub use tensor::{Tensor, TensorError};
pub use types::{AttributionMap, Ensemble, Image};
