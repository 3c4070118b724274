//! Per-map normalization applied to base attributions before aggregation.
//!
//! Degenerate maps (constant, or zero norm) normalize to all zeros.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AttributionMap, Ensemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationKind {
    #[default]
    None,
    Linear,
    #[serde(rename = "zscore")]
    ZScore,
    L1,
    L2,
}

impl NormalizationKind {
    pub const ALL: [NormalizationKind; 5] = [
        NormalizationKind::None,
        NormalizationKind::Linear,
        NormalizationKind::ZScore,
        NormalizationKind::L1,
        NormalizationKind::L2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NormalizationKind::None => "none",
            NormalizationKind::Linear => "linear",
            NormalizationKind::ZScore => "zscore",
            NormalizationKind::L1 => "l1",
            NormalizationKind::L2 => "l2",
        }
    }

    pub fn apply(self, e: &AttributionMap) -> Result<AttributionMap> {
        match self {
            NormalizationKind::None => Ok(e.clone()),
            NormalizationKind::Linear => normalize_linear(e),
            NormalizationKind::ZScore => normalize_zscore(e),
            NormalizationKind::L1 => normalize_l1(e),
            NormalizationKind::L2 => normalize_l2(e),
        }
    }
}

impl fmt::Display for NormalizationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormalizationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "linear" | "lin" => Ok(Self::Linear),
            "zscore" | "z" => Ok(Self::ZScore),
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            other => Err(Error::param(format!("unknown normalization '{other}'"))),
        }
    }
}

fn zeros_like(e: &AttributionMap) -> Result<AttributionMap> {
    e.with_values(vec![0.0; e.len()])
}

/// Min-max scaling to [0, 1].
pub fn normalize_linear(e: &AttributionMap) -> Result<AttributionMap> {
    let (lo, hi) = e
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range == 0.0 {
        return zeros_like(e);
    }
    // the max pixel maps to exactly 1 and the result stays within [0, 1]
    e.with_values(
        e.values()
            .iter()
            .map(|&v| {
                if v == hi {
                    1.0
                } else {
                    ((v - lo) / range).min(1.0)
                }
            })
            .collect(),
    )
}

/// Global mean and population standard deviation over all pixels, two-pass.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn normalize_zscore(e: &AttributionMap) -> Result<AttributionMap> {
    let (mean, std) = mean_std(e.values());
    if std == 0.0 {
        return zeros_like(e);
    }
    let centered: Vec<f64> = e.values().iter().map(|v| v - mean).collect();
    // Re-centre once to cancel the rounding left by the first mean; this
    // keeps |mean| near machine precision for maps with a large offset.
    let (residual, _) = mean_std(&centered);
    e.with_values(centered.iter().map(|v| (v - residual) / std).collect())
}

pub fn normalize_l1(e: &AttributionMap) -> Result<AttributionMap> {
    let norm: f64 = e.values().iter().map(|v| v.abs()).sum();
    if norm == 0.0 {
        return zeros_like(e);
    }
    e.with_values(e.values().iter().map(|v| v / norm).collect())
}

pub fn normalize_l2(e: &AttributionMap) -> Result<AttributionMap> {
    // scale by the max magnitude first so squaring cannot overflow
    let scale = e.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return zeros_like(e);
    }
    let norm = scale
        * e.values()
            .iter()
            .map(|v| (v / scale).powi(2))
            .sum::<f64>()
            .sqrt();
    e.with_values(e.values().iter().map(|v| v / norm).collect())
}

/// Normalizes every member independently; shapes, order and names are kept.
pub fn normalize_ensemble(ensemble: &Ensemble, kind: NormalizationKind) -> Result<Ensemble> {
    if kind == NormalizationKind::None {
        return Ok(ensemble.clone());
    }
    ensemble.map_members(|m| kind.apply(m))
}
