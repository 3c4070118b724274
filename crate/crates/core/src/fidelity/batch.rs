//! Evaluation of many samples with per-sample and batch-mean results.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregationSpec};
use crate::backend::ModelBackend;
use crate::error::{Error, Result};
use crate::normalization::{normalize_ensemble, NormalizationKind};
use crate::types::{AttributionMap, Ensemble, Image};

use super::{
    make_baseline, run_metric_with_baseline, BaselineSpec, Direction, FidelityCurve, MetricConfig,
    TieBreak,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Explanation {
    Map(AttributionMap),
    Ensemble(Ensemble),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub explanation: Explanation,
    pub image: Image,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub normalization: NormalizationKind,
    pub aggregation: AggregationSpec,
    pub increments: usize,
    /// Seeds here are base seeds; each sample derives its own.
    pub baseline: BaselineSpec,
    pub tie_break: TieBreak,
    pub batch_size: usize,
    pub directions: Vec<Direction>,
}

impl BatchConfig {
    /// Metric settings for sample `index`, with derived seeds.
    pub fn metric_for(&self, index: usize, direction: Direction) -> MetricConfig {
        let baseline = match self.baseline {
            BaselineSpec::Normal { seed } => BaselineSpec::Normal {
                seed: derive_seed(seed, index as u64),
            },
            other => other,
        };
        let tie_break = match self.tie_break {
            TieBreak::Shuffle { seed } => TieBreak::Shuffle {
                seed: derive_seed(seed, index as u64),
            },
            other => other,
        };
        MetricConfig {
            increments: self.increments,
            baseline,
            tie_break,
            direction,
            batch_size: self.batch_size,
        }
    }
}

/// SplitMix64 of `base` offset by `index`; distinct samples get
/// decorrelated streams from one user seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Normalizes and aggregates an ensemble; a single map is only normalized.
pub fn explanation_map(
    explanation: &Explanation,
    normalization: NormalizationKind,
    aggregation: &AggregationSpec,
) -> Result<AttributionMap> {
    match explanation {
        Explanation::Map(m) => normalization.apply(m),
        Explanation::Ensemble(e) => aggregate(&normalize_ensemble(e, normalization)?, aggregation),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCurves {
    pub curves: BTreeMap<Direction, FidelityCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curves: Option<SampleCurves>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The error originated in the backend rather than the inputs.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backend_failure: bool,
}

impl SampleResult {
    pub fn auc(&self, direction: Direction) -> Option<f64> {
        self.curves.as_ref()?.curves.get(&direction).map(|c| c.auc)
    }
}

/// Pointwise mean of the successful curves of one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCurve {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Trapezoid area of the mean curve.
    pub auc: f64,
    /// Arithmetic mean of per-sample areas; equal to `auc` up to rounding.
    pub mean_sample_auc: f64,
    pub count: usize,
}

impl MeanCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in self.xs.iter().zip(&self.ys) {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub samples: Vec<SampleResult>,
    pub means: BTreeMap<Direction, MeanCurve>,
    /// Some samples failed; means cover the rest.
    pub partial: bool,
}

impl BatchReport {
    pub fn mean_auc(&self, direction: Direction) -> Option<f64> {
        self.means.get(&direction).map(|m| m.mean_sample_auc)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SampleResult> {
        self.samples.iter().filter(|s| s.error.is_some())
    }
}

fn evaluate_sample(
    index: usize,
    sample: &Sample,
    model: &dyn ModelBackend,
    cfg: &BatchConfig,
) -> Result<SampleCurves> {
    let map = explanation_map(&sample.explanation, cfg.normalization, &cfg.aggregation)?;
    // one baseline per sample, shared by both directions
    let baseline_spec = cfg.metric_for(index, Direction::Insertion).baseline;
    let baseline = make_baseline(&sample.image, &baseline_spec)?;
    let mut curves = BTreeMap::new();
    for &direction in &cfg.directions {
        let metric = cfg.metric_for(index, direction);
        let curve =
            run_metric_with_baseline(&map, &sample.image, &baseline, sample.class, model, &metric)?;
        curves.insert(direction, curve);
    }
    Ok(SampleCurves { curves })
}

fn mean_curve(curves: &[&FidelityCurve]) -> Result<MeanCurve> {
    let first = curves[0];
    if curves.iter().any(|c| c.xs != first.xs) {
        return Err(Error::param(
            "curves with different grids cannot be averaged",
        ));
    }
    let n = curves.len() as f64;
    let ys: Vec<f64> = (0..first.ys.len())
        .map(|i| curves.iter().map(|c| c.ys[i]).sum::<f64>() / n)
        .collect();
    let auc = super::auc(&first.xs, &ys)?;
    Ok(MeanCurve {
        xs: first.xs.clone(),
        ys,
        auc,
        mean_sample_auc: curves.iter().map(|c| c.auc).sum::<f64>() / n,
        count: curves.len(),
    })
}

/// Evaluates every sample, one worker thread per backend. Failing samples
/// are reported with their error and excluded from the means.
pub fn evaluate_batch(
    samples: &[Sample],
    backends: &[&dyn ModelBackend],
    cfg: &BatchConfig,
) -> Result<BatchReport> {
    if backends.is_empty() {
        return Err(Error::param("at least one backend is required"));
    }
    if cfg.directions.is_empty() {
        return Err(Error::param("no metric direction requested"));
    }
    cfg.aggregation.validate()?;

    let results: Mutex<Vec<Option<SampleResult>>> = Mutex::new(vec![None; samples.len()]);
    let next = AtomicUsize::new(0);
    let work = |model: &dyn ModelBackend| loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(sample) = samples.get(i) else { break };
        let result = match evaluate_sample(i, sample, model, cfg) {
            Ok(curves) => SampleResult {
                id: sample.id.clone(),
                curves: Some(curves),
                error: None,
                backend_failure: false,
            },
            Err(e) => SampleResult {
                id: sample.id.clone(),
                curves: None,
                error: Some(e.to_string()),
                backend_failure: e.is_backend(),
            },
        };
        results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(result);
    };
    let workers = backends.len().min(samples.len()).max(1);
    if workers == 1 {
        work(backends[0]);
    } else {
        thread::scope(|s| {
            for &model in &backends[..workers] {
                s.spawn(move || work(model));
            }
        });
    }

    let samples: Vec<SampleResult> = results
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|r| r.expect("every sample is visited"))
        .collect();
    let partial = samples.iter().any(|s| s.error.is_some());
    let mut means = BTreeMap::new();
    for &direction in &cfg.directions {
        let curves: Vec<&FidelityCurve> = samples
            .iter()
            .filter_map(|s| s.curves.as_ref()?.curves.get(&direction))
            .collect();
        if !curves.is_empty() {
            means.insert(direction, mean_curve(&curves)?);
        }
    }
    Ok(BatchReport {
        samples,
        means,
        partial,
    })
}
