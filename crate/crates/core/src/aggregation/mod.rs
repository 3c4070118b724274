//! Aggregation operators mapping an ensemble of maps to a single map.
//!
//! Per-pixel statistics are computed over the member values sorted
//! ascending, so every operator except the RBM is exactly invariant to the
//! order of ensemble members.

mod acquisition;
mod rbm;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AttributionMap, Ensemble};

pub use acquisition::{
    aggregate_aei, aggregate_api, aggregate_ci, aggregate_ei, aggregate_pi, aggregate_ucb,
    ci_epsilon, ei_value, epsilon_grid, pi_value,
};
pub use rbm::{aggregate_rbm, aggregate_rbm_with, pearson, RbmConfig, WeightInit};

pub const DEFAULT_SAMPLES: usize = 64;
pub const DEFAULT_VAR_DELTA: f64 = 1e-8;

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn default_delta() -> f64 {
    DEFAULT_VAR_DELTA
}

/// An aggregation method together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum AggregationSpec {
    #[serde(rename = "avg", alias = "average")]
    Average,
    Percentile {
        k: f64,
    },
    Ucb {
        epsilon: f64,
    },
    Pi {
        epsilon: f64,
    },
    Ei {
        epsilon: f64,
    },
    Ci {
        /// Use an exploration rate of 0 instead of failing when E+ <= 0.
        #[serde(default)]
        zero_fallback: bool,
    },
    Api {
        a: f64,
        b: f64,
        #[serde(default = "default_samples")]
        n: usize,
    },
    Aei {
        a: f64,
        b: f64,
        #[serde(default = "default_samples")]
        n: usize,
    },
    Var {
        epsilon: f64,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    Rbm {
        alpha: f64,
        iters: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl AggregationSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationSpec::Average => "avg",
            AggregationSpec::Percentile { .. } => "percentile",
            AggregationSpec::Ucb { .. } => "ucb",
            AggregationSpec::Pi { .. } => "pi",
            AggregationSpec::Ei { .. } => "ei",
            AggregationSpec::Ci { .. } => "ci",
            AggregationSpec::Api { .. } => "api",
            AggregationSpec::Aei { .. } => "aei",
            AggregationSpec::Var { .. } => "var",
            AggregationSpec::Rbm { .. } => "rbm",
        }
    }

    /// Smallest ensemble the method accepts.
    pub fn min_members(&self) -> usize {
        match self {
            AggregationSpec::Average | AggregationSpec::Percentile { .. } => 1,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be finite, got {v}")))
            }
        };
        match *self {
            AggregationSpec::Average | AggregationSpec::Ci { .. } => Ok(()),
            AggregationSpec::Percentile { k } => {
                if (0.0..=100.0).contains(&k) {
                    Ok(())
                } else {
                    Err(Error::param(format!("percentile k={k} outside [0, 100]")))
                }
            }
            AggregationSpec::Ucb { epsilon }
            | AggregationSpec::Pi { epsilon }
            | AggregationSpec::Ei { epsilon } => finite("epsilon", epsilon),
            AggregationSpec::Api { a, b, n } | AggregationSpec::Aei { a, b, n } => {
                finite("a", a)?;
                finite("b", b)?;
                if a >= b {
                    return Err(Error::param(format!("interval [{a}, {b}] requires a < b")));
                }
                if n < 2 {
                    return Err(Error::param(format!("sample count n={n} must be >= 2")));
                }
                Ok(())
            }
            AggregationSpec::Var { epsilon, delta } => {
                finite("epsilon", epsilon)?;
                finite("delta", delta)?;
                if epsilon < 0.0 {
                    return Err(Error::param(format!("VAR epsilon={epsilon} must be >= 0")));
                }
                if delta <= 0.0 {
                    return Err(Error::param(format!("VAR delta={delta} must be > 0")));
                }
                Ok(())
            }
            AggregationSpec::Rbm { alpha, .. } => {
                if alpha.is_finite() && alpha > 0.0 {
                    Ok(())
                } else {
                    Err(Error::param(format!("RBM alpha={alpha} must be > 0")))
                }
            }
        }
    }
}

impl fmt::Display for AggregationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AggregationSpec::Average => write!(f, "avg"),
            AggregationSpec::Percentile { k } => write!(f, "percentile(k={k})"),
            AggregationSpec::Ucb { epsilon } => write!(f, "ucb(eps={epsilon})"),
            AggregationSpec::Pi { epsilon } => write!(f, "pi(eps={epsilon})"),
            AggregationSpec::Ei { epsilon } => write!(f, "ei(eps={epsilon})"),
            AggregationSpec::Ci { .. } => write!(f, "ci"),
            AggregationSpec::Api { a, b, n } => write!(f, "api([{a},{b}], n={n})"),
            AggregationSpec::Aei { a, b, n } => write!(f, "aei([{a},{b}], n={n})"),
            AggregationSpec::Var { epsilon, delta } => {
                write!(f, "var(eps={epsilon}, delta={delta})")
            }
            AggregationSpec::Rbm { alpha, iters, seed } => {
                write!(f, "rbm(alpha={alpha}, k={iters}, seed={seed})")
            }
        }
    }
}

/// Per-pixel mean and population standard deviation across the ensemble,
/// plus the incumbent `best` = max of the mean field.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelStats {
    mean: AttributionMap,
    std: AttributionMap,
    best: f64,
}

impl PixelStats {
    /// Builds stats from explicit fields; `best` is derived from `mean`.
    pub fn from_parts(mean: AttributionMap, std: AttributionMap) -> Result<Self> {
        if mean.shape() != std.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", mean.shape()),
                found: format!("{:?}", std.shape()),
            });
        }
        if let Some(s) = std.values().iter().find(|&&s| s < 0.0) {
            return Err(Error::param(format!("negative standard deviation {s}")));
        }
        let best = max_of(mean.values());
        Ok(Self { mean, std, best })
    }

    pub fn mean(&self) -> &AttributionMap {
        &self.mean
    }

    pub fn std(&self) -> &AttributionMap {
        &self.std
    }

    /// E+, the mean attribution of the most important pixel.
    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mean.shape()
    }

    /// Applies `f(mean, std)` per pixel.
    pub(crate) fn map_pixels<F>(&self, f: F) -> Result<AttributionMap>
    where
        F: Fn(f64, f64) -> f64,
    {
        let values = self
            .mean
            .values()
            .iter()
            .zip(self.std.values())
            .map(|(&m, &s)| f(m, s))
            .collect();
        self.mean.with_values(values)
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn require(ensemble: &Ensemble, n: usize) -> Result<()> {
    if ensemble.len() < n {
        Err(Error::InsufficientEnsemble {
            required: n,
            found: ensemble.len(),
        })
    } else {
        Ok(())
    }
}

/// Gathers each pixel's member values, sorts them ascending and reduces
/// them with `f`.
fn reduce_sorted<F>(ensemble: &Ensemble, mut f: F) -> Result<AttributionMap>
where
    F: FnMut(&[f64]) -> f64,
{
    let members = ensemble.members();
    let mut column = vec![0.0; members.len()];
    let out = (0..ensemble.pixel_count())
        .map(|p| {
            for (slot, m) in column.iter_mut().zip(members) {
                *slot = m.values()[p];
            }
            column.sort_by(f64::total_cmp);
            f(&column)
        })
        .collect();
    members[0].with_values(out)
}

fn mean_of_sorted(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_of_sorted(v: &[f64], mean: f64) -> f64 {
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn pixel_stats(ensemble: &Ensemble) -> Result<PixelStats> {
    require(ensemble, 2)?;
    let mut std = Vec::with_capacity(ensemble.pixel_count());
    let mean = reduce_sorted(ensemble, |v| {
        let m = mean_of_sorted(v);
        std.push(std_of_sorted(v, m));
        m
    })?;
    let std = mean.with_values(std)?;
    let best = max_of(mean.values());
    Ok(PixelStats { mean, std, best })
}

pub fn aggregate_average(ensemble: &Ensemble) -> Result<AttributionMap> {
    require(ensemble, 1)?;
    reduce_sorted(ensemble, mean_of_sorted)
}

/// Linear-interpolation percentile of ascending `sorted` values.
pub fn percentile_of_sorted(sorted: &[f64], k: f64) -> f64 {
    let last = sorted.len() - 1;
    let rank = k / 100.0 * last as f64;
    let lo = (rank.floor() as usize).min(last);
    let hi = (lo + 1).min(last);
    let frac = rank - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        (1.0 - frac) * sorted[lo] + frac * sorted[hi]
    }
}

pub fn aggregate_percentile(ensemble: &Ensemble, k: f64) -> Result<AttributionMap> {
    require(ensemble, 1)?;
    AggregationSpec::Percentile { k }.validate()?;
    reduce_sorted(ensemble, |v| percentile_of_sorted(v, k))
}

/// Variance aggregation: mean of e / (epsilon * sigma + delta).
pub fn aggregate_var(ensemble: &Ensemble, epsilon: f64, delta: f64) -> Result<AttributionMap> {
    AggregationSpec::Var { epsilon, delta }.validate()?;
    require(ensemble, 2)?;
    reduce_sorted(ensemble, |v| {
        let m = mean_of_sorted(v);
        let denom = epsilon * std_of_sorted(v, m) + delta;
        v.iter().map(|e| e / denom).sum::<f64>() / v.len() as f64
    })
}

/// Dispatches to the operator named by `spec`.
pub fn aggregate(ensemble: &Ensemble, spec: &AggregationSpec) -> Result<AttributionMap> {
    spec.validate()?;
    require(ensemble, spec.min_members())?;
    match *spec {
        AggregationSpec::Average => aggregate_average(ensemble),
        AggregationSpec::Percentile { k } => aggregate_percentile(ensemble, k),
        AggregationSpec::Ucb { epsilon } => aggregate_ucb(&pixel_stats(ensemble)?, epsilon),
        AggregationSpec::Pi { epsilon } => aggregate_pi(&pixel_stats(ensemble)?, epsilon),
        AggregationSpec::Ei { epsilon } => aggregate_ei(&pixel_stats(ensemble)?, epsilon),
        AggregationSpec::Ci { zero_fallback } => aggregate_ci(ensemble, zero_fallback),
        AggregationSpec::Api { a, b, n } => aggregate_api(&pixel_stats(ensemble)?, a, b, n),
        AggregationSpec::Aei { a, b, n } => aggregate_aei(&pixel_stats(ensemble)?, a, b, n),
        AggregationSpec::Var { epsilon, delta } => aggregate_var(ensemble, epsilon, delta),
        AggregationSpec::Rbm { alpha, iters, seed } => aggregate_rbm(ensemble, alpha, iters, seed),
    }
}
