//! Insertion and deletion fidelity metrics.
//!
//! Pixels are moved between a baseline image and the original in order of
//! descending attribution. After step `t` of `increments`, the first
//! `floor(t * m * n / increments)` pixels of that order have moved (all
//! channels of a pixel together) and the model's probability for the
//! target class is recorded. The score is the trapezoidal area under the
//! resulting curve: high is good for insertion, low is good for deletion.

mod baseline;
mod batch;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{validate_probabilities, ModelBackend, EXTERNAL_SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::types::{AttributionMap, Image};

pub use baseline::{make_baseline, BaselineSpec};
pub use batch::{
    derive_seed, evaluate_batch, explanation_map, BatchConfig, BatchReport, Explanation, MeanCurve,
    Sample, SampleCurves, SampleResult,
};

pub const DEFAULT_INCREMENTS: usize = 1000;
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Insertion,
    Deletion,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Insertion, Direction::Deletion];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Insertion => "insertion",
            Direction::Deletion => "deletion",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How pixels with equal attribution are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TieBreak {
    /// Ascending row-major index.
    #[default]
    Index,
    /// Seeded shuffle within each group of equal values.
    Shuffle { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub increments: usize,
    pub baseline: BaselineSpec,
    #[serde(default)]
    pub tie_break: TieBreak,
    pub direction: Direction,
    /// Images per model call.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

impl MetricConfig {
    pub fn new(direction: Direction, baseline: BaselineSpec) -> Self {
        Self {
            increments: DEFAULT_INCREMENTS,
            baseline,
            tie_break: TieBreak::Index,
            direction,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

/// Probability of the target class against the fraction of pixels moved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurve {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub auc: f64,
}

impl FidelityCurve {
    /// Validates the invariants and computes the area.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.first() != Some(&0.0) || xs.last() != Some(&1.0) {
            return Err(Error::param("curve must span x = 0 to x = 1"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("curve xs must be strictly increasing"));
        }
        if let Some(y) = ys.iter().find(|y| !(0.0..=1.0).contains(*y)) {
            return Err(Error::param(format!("curve value {y} outside [0, 1]")));
        }
        let auc = auc(&xs, &ys)?;
        Ok(Self { xs, ys, auc })
    }

    pub fn increments(&self) -> usize {
        self.xs.len() - 1
    }

    /// CSV with header `x,y`, one point per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in self.xs.iter().zip(&self.ys) {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

/// Trapezoidal area under `(xs, ys)`.
pub fn auc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::param(format!(
            "xs has {} points, ys has {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::param("need at least two points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("curve".into()));
    }
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("xs must be ascending"));
    }
    Ok(xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum())
}

/// Pixel indices by descending attribution.
pub fn pixel_order(map: &AttributionMap, tie_break: TieBreak) -> Vec<usize> {
    let v = map.values();
    let mut order: Vec<usize> = (0..v.len()).collect();
    // values are finite, so partial_cmp never fails; -0.0 ties with 0.0
    order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).expect("finite").then(a.cmp(&b)));
    if let TieBreak::Shuffle { seed } = tie_break {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut start = 0;
        while start < order.len() {
            let value = v[order[start]];
            let end = start
                + order[start..]
                    .iter()
                    .take_while(|&&p| v[p] == value)
                    .count();
            order[start..end].shuffle(&mut rng);
            start = end;
        }
    }
    order
}

/// Number of pixels moved after step `t`.
pub fn pixels_moved(t: usize, pixels: usize, increments: usize) -> usize {
    // u128 keeps t * pixels exact for any realistic image
    ((t as u128 * pixels as u128) / increments as u128) as usize
}

/// Runs one insertion or deletion pass with a baseline built from `cfg`.
pub fn run_metric(
    map: &AttributionMap,
    image: &Image,
    class: usize,
    model: &dyn ModelBackend,
    cfg: &MetricConfig,
) -> Result<FidelityCurve> {
    let baseline = make_baseline(image, &cfg.baseline)?;
    run_metric_with_baseline(map, image, &baseline, class, model, cfg)
}

/// Like [`run_metric`] with an explicit baseline image; `cfg.baseline` is
/// ignored.
pub fn run_metric_with_baseline(
    map: &AttributionMap,
    image: &Image,
    baseline: &Image,
    class: usize,
    model: &dyn ModelBackend,
    cfg: &MetricConfig,
) -> Result<FidelityCurve> {
    let (h, w, _) = image.shape();
    if map.shape() != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: format!("{h}x{w} attribution for the image"),
            found: format!("{}x{}", map.height(), map.width()),
        });
    }
    if baseline.shape() != image.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?} baseline", image.shape()),
            found: format!("{:?}", baseline.shape()),
        });
    }
    let info = model.info();
    if class >= info.classes {
        return Err(Error::param(format!(
            "class {class} out of range for a {}-class model",
            info.classes
        )));
    }
    let pixels = h * w;
    let increments = cfg.increments;
    if increments == 0 || increments > pixels {
        return Err(Error::param(format!(
            "increments {increments} must be in 1..={pixels}"
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::param("batch size must be >= 1"));
    }

    let order = pixel_order(map, cfg.tie_break);
    let (start, end) = match cfg.direction {
        Direction::Insertion => (baseline, image),
        Direction::Deletion => (image, baseline),
    };
    let mut current = start.clone();
    let mut moved = 0;
    let mut ys = Vec::with_capacity(increments + 1);
    let mut pending = Vec::with_capacity(cfg.batch_size);
    let mut first_step = 0;
    for t in 0..=increments {
        let target = pixels_moved(t, pixels, increments);
        for &p in &order[moved..target] {
            current.copy_pixel_from(end, p);
        }
        moved = target;
        pending.push(current.clone());
        if pending.len() == cfg.batch_size || t == increments {
            let probs = model
                .predict(&pending)
                .map_err(|source| Error::BackendAtStep {
                    step: first_step,
                    source,
                })?;
            validate_probabilities(&probs, pending.len(), info.classes, EXTERNAL_SUM_TOLERANCE)
                .map_err(|source| Error::BackendAtStep {
                    step: first_step,
                    source,
                })?;
            ys.extend(probs.iter().map(|p| p[class]));
            pending.clear();
            first_step = t + 1;
        }
    }
    let xs = (0..=increments)
        .map(|t| t as f64 / increments as f64)
        .collect();
    FidelityCurve::new(xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, BackendInfo, LinearEvidence, MatchFraction};
    use std::sync::Mutex;

    fn map(h: usize, w: usize, v: &[f64]) -> AttributionMap {
        AttributionMap::new(h, w, v.to_vec()).unwrap()
    }

    fn cfg(direction: Direction, increments: usize) -> MetricConfig {
        MetricConfig {
            increments,
            baseline: BaselineSpec::Constant { value: 0.0 },
            tie_break: TieBreak::Index,
            direction,
            batch_size: 3,
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]).unwrap(), 0.5);
        let xs: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        // trapezoid error for x^2 is h^2 / 6
        assert!((auc(&xs, &ys).unwrap() - 1.0 / 3.0).abs() < 1e-6);
        assert!(auc(&[0.0, 1.0], &[1.0]).is_err());
        assert!(auc(&[1.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(auc(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn pixel_order_examples() {
        assert_eq!(
            pixel_order(&map(2, 2, &[3., 1., 2., 0.]), TieBreak::Index),
            vec![0, 2, 1, 3]
        );
        assert_eq!(
            pixel_order(&map(2, 3, &[1.0; 6]), TieBreak::Index),
            vec![0, 1, 2, 3, 4, 5]
        );
        let flat = map(4, 4, &[0.5; 16]);
        let a = pixel_order(&flat, TieBreak::Shuffle { seed: 9 });
        let b = pixel_order(&flat, TieBreak::Shuffle { seed: 9 });
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());
        assert_ne!(a, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn shuffle_only_permutes_within_ties() {
        let m = map(1, 6, &[2., 0., 2., 5., 0., 0.]);
        let order = pixel_order(&m, TieBreak::Shuffle { seed: 3 });
        assert_eq!(order[0], 3);
        let mut top: Vec<usize> = order[1..3].to_vec();
        top.sort();
        assert_eq!(top, vec![0, 2]);
        let mut rest: Vec<usize> = order[3..].to_vec();
        rest.sort();
        assert_eq!(rest, vec![1, 4, 5]);
    }

    #[test]
    fn match_fraction_hand_example() {
        let image = Image::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let model = MatchFraction::new(image.clone());
        let baseline = Image::new(1, 2, 1, vec![-1.0, -2.0]).unwrap();
        for attribution in [[0.3, 0.9], [0.9, 0.3]] {
            let m = map(1, 2, &attribution);
            let ins = run_metric_with_baseline(
                &m,
                &image,
                &baseline,
                0,
                &model,
                &cfg(Direction::Insertion, 2),
            )
            .unwrap();
            assert_eq!(ins.xs, vec![0.0, 0.5, 1.0]);
            assert_eq!(ins.ys, vec![0.0, 0.5, 1.0]);
            assert_eq!(ins.auc, 0.5);
            let del = run_metric_with_baseline(
                &m,
                &image,
                &baseline,
                0,
                &model,
                &cfg(Direction::Deletion, 2),
            )
            .unwrap();
            assert_eq!(del.ys, vec![1.0, 0.5, 0.0]);
            assert_eq!(del.auc, 0.5);
        }
    }

    #[test]
    fn step_sizes_follow_floor_rule() {
        assert_eq!(
            (0..=4).map(|t| pixels_moved(t, 4, 4)).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );
        assert_eq!(
            (0..=3).map(|t| pixels_moved(t, 10, 3)).collect::<Vec<_>>(),
            vec![0, 3, 6, 10]
        );
        assert_eq!(pixels_moved(1, 224 * 224, 1000), 50);
    }

    /// Records every image it is asked about.
    struct Recorder {
        inner: LinearEvidence,
        seen: Mutex<Vec<Image>>,
    }

    impl ModelBackend for Recorder {
        fn info(&self) -> BackendInfo {
            self.inner.info()
        }

        fn predict(&self, batch: &[Image]) -> std::result::Result<Vec<Vec<f64>>, BackendError> {
            self.seen.lock().unwrap().extend_from_slice(batch);
            self.inner.predict(batch)
        }
    }

    #[test]
    fn endpoints_are_exact_images() {
        let image = Image::new(2, 3, 3, (0..18).map(|i| (i as f64).sin()).collect()).unwrap();
        let weights = map(2, 3, &[0.1, 0.5, 0.2, 0.9, 0.3, 0.4]);
        let model = Recorder {
            inner: LinearEvidence::new(vec![weights.clone(), map(2, 3, &[0.0; 6])], 1.0, 3)
                .unwrap(),
            seen: Mutex::new(Vec::new()),
        };
        let mut c = cfg(Direction::Insertion, 6);
        c.baseline = BaselineSpec::Normal { seed: 4 };
        let baseline = make_baseline(&image, &c.baseline).unwrap();
        run_metric(&weights, &image, 0, &model, &c).unwrap();
        {
            let seen = model.seen.lock().unwrap();
            assert_eq!(seen.len(), 7);
            assert_eq!(seen[0], baseline);
            assert_eq!(seen[6], image);
        }
        model.seen.lock().unwrap().clear();
        c.direction = Direction::Deletion;
        run_metric(&weights, &image, 0, &model, &c).unwrap();
        let seen = model.seen.lock().unwrap();
        assert_eq!(seen[0], image);
        assert_eq!(seen[6], baseline);
    }

    #[test]
    fn rejects_bad_inputs() {
        let image = Image::filled(2, 2, 1, 1.0).unwrap();
        let model = MatchFraction::new(image.clone());
        let m = map(2, 2, &[1., 2., 3., 4.]);
        assert!(run_metric(
            &map(1, 4, &[0.; 4]),
            &image,
            0,
            &model,
            &cfg(Direction::Insertion, 4)
        )
        .is_err());
        assert!(run_metric(&m, &image, 2, &model, &cfg(Direction::Insertion, 4)).is_err());
        assert!(run_metric(&m, &image, 0, &model, &cfg(Direction::Insertion, 5)).is_err());
        assert!(run_metric(&m, &image, 0, &model, &cfg(Direction::Insertion, 0)).is_err());
    }

    #[test]
    fn same_ranking_same_curve() {
        let image = Image::new(2, 2, 1, vec![0.2, 0.9, 0.4, 0.7]).unwrap();
        let model = LinearEvidence::new(
            vec![map(2, 2, &[1., 2., 3., 4.]), map(2, 2, &[0.5; 4])],
            0.5,
            1,
        )
        .unwrap();
        let c = cfg(Direction::Insertion, 4);
        let a = run_metric(&map(2, 2, &[4., 3., 2., 1.]), &image, 0, &model, &c).unwrap();
        let b = run_metric(&map(2, 2, &[40., 0.3, 0.2, -1.]), &image, 0, &model, &c).unwrap();
        assert_eq!(a, b);
    }
}
