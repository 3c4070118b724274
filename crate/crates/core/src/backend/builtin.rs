//! Synthetic classifiers with known ground-truth importance.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor, Tensor};
use crate::types::{AttributionMap, Image};

use super::{check_shapes, BackendError, BackendInfo, ModelBackend};

/// Softmax over per-class linear evidence:
/// `logit_c = sum_{i,j,ch} W_c[i,j] * I[i,j,ch] / temperature`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEvidence {
    weights: Vec<AttributionMap>,
    temperature: f64,
    channels: usize,
}

impl LinearEvidence {
    pub fn new(weights: Vec<AttributionMap>, temperature: f64, channels: usize) -> Result<Self> {
        let first = weights
            .first()
            .ok_or_else(|| Error::param("linear-evidence model needs at least one class"))?;
        if weights.iter().any(|w| w.shape() != first.shape()) {
            return Err(Error::InvalidShape(
                "class weight maps differ in shape".into(),
            ));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::param(format!(
                "temperature {temperature} must be > 0"
            )));
        }
        if channels == 0 {
            return Err(Error::param("channels must be >= 1"));
        }
        Ok(Self {
            weights,
            temperature,
            channels,
        })
    }

    /// Weights from an (m, n, C) tensor, class index last.
    pub fn from_tensor(t: &Tensor, temperature: f64, channels: usize) -> Result<Self> {
        let (h, w, classes) = match *t.dims() {
            [h, w, c] => (h, w, c),
            _ => {
                return Err(Error::InvalidShape(format!(
                    "weights must be rank 3 (m, n, classes), got {:?}",
                    t.dims()
                )))
            }
        };
        let all = t.to_f64();
        let weights = (0..classes)
            .map(|c| {
                AttributionMap::new(h, w, all.iter().skip(c).step_by(classes).copied().collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, temperature, channels)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let (h, w) = self.weights[0].shape();
        let classes = self.weights.len();
        let mut values = vec![0.0; h * w * classes];
        for (c, map) in self.weights.iter().enumerate() {
            for (p, &v) in map.values().iter().enumerate() {
                values[p * classes + c] = v;
            }
        }
        Ok(Tensor::from_f64(vec![h, w, classes], &values)?)
    }

    pub fn read(path: impl AsRef<Path>, temperature: f64, channels: usize) -> Result<Self> {
        Self::from_tensor(&read_tensor(path)?, temperature, channels)
    }

    pub fn weights(&self) -> &[AttributionMap] {
        &self.weights
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn logits(&self, image: &Image) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| {
                let evidence: f64 = w
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(p, &wp)| wp * image.pixel(p).iter().sum::<f64>())
                    .sum();
                evidence / self.temperature
            })
            .collect()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl ModelBackend for LinearEvidence {
    fn info(&self) -> BackendInfo {
        let (h, w) = self.weights[0].shape();
        BackendInfo {
            classes: self.weights.len(),
            shape: [h, w, self.channels],
        }
    }

    fn predict(&self, batch: &[Image]) -> std::result::Result<Vec<Vec<f64>>, BackendError> {
        check_shapes(&self.info(), batch)?;
        Ok(batch.iter().map(|img| softmax(&self.logits(img))).collect())
    }
}

/// Two-class model: class 0 is the fraction of pixels whose channels all
/// equal the reference exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchFraction {
    reference: Image,
}

impl MatchFraction {
    pub fn new(reference: Image) -> Self {
        Self { reference }
    }

    pub fn reference(&self) -> &Image {
        &self.reference
    }

    fn score(&self, image: &Image) -> f64 {
        let n = self.reference.pixel_count();
        let matching = (0..n)
            .filter(|&p| image.pixel(p) == self.reference.pixel(p))
            .count();
        matching as f64 / n as f64
    }
}

impl ModelBackend for MatchFraction {
    fn info(&self) -> BackendInfo {
        let (h, w, d) = self.reference.shape();
        BackendInfo {
            classes: 2,
            shape: [h, w, d],
        }
    }

    fn predict(&self, batch: &[Image]) -> std::result::Result<Vec<Vec<f64>>, BackendError> {
        check_shapes(&self.info(), batch)?;
        Ok(batch
            .iter()
            .map(|img| {
                let f = self.score(img);
                vec![f, 1.0 - f]
            })
            .collect())
    }
}

/// Description of a built-in model, as named in run configurations.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticModelSpec {
    LinearEvidence(LinearEvidence),
    MatchFraction(MatchFraction),
}

impl SyntheticModelSpec {
    pub fn into_backend(self) -> Box<dyn ModelBackend> {
        match self {
            SyntheticModelSpec::LinearEvidence(m) => Box::new(m),
            SyntheticModelSpec::MatchFraction(m) => Box::new(m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f64]) -> AttributionMap {
        AttributionMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn equal_weights_give_uniform() {
        let w = map(2, 2, &[0.3, -1.0, 2.0, 0.5]);
        let model = LinearEvidence::new(vec![w.clone(), w], 0.7, 3).unwrap();
        let img = Image::new(2, 2, 3, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let p = model.predict(&[img]).unwrap();
        assert_eq!(p[0], vec![0.5, 0.5]);
    }

    #[test]
    fn zero_image_gives_uniform() {
        let model = LinearEvidence::new(
            vec![
                map(1, 2, &[1., 2.]),
                map(1, 2, &[-3., 0.]),
                map(1, 2, &[0., 5.]),
            ],
            1.0,
            1,
        )
        .unwrap();
        let p = model
            .predict(&[Image::filled(1, 2, 1, 0.0).unwrap()])
            .unwrap();
        for x in &p[0] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_pixel_softmax() {
        let model =
            LinearEvidence::new(vec![map(1, 1, &[1.0]), map(1, 1, &[0.0])], 1.0, 1).unwrap();
        let p = model
            .predict(&[Image::filled(1, 1, 1, 1.0).unwrap()])
            .unwrap();
        // e / (e + 1)
        let e = std::f64::consts::E;
        assert!((p[0][0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0][0] - 0.731059).abs() < 1e-6);
        assert!((p[0][1] - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn rejects_wrong_shape() {
        let model = LinearEvidence::new(vec![map(1, 1, &[1.0])], 1.0, 1).unwrap();
        assert!(matches!(
            model.predict(&[Image::filled(1, 2, 1, 0.0).unwrap()]),
            Err(BackendError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn weights_tensor_is_class_last() {
        let model =
            LinearEvidence::new(vec![map(1, 2, &[1., 2.]), map(1, 2, &[3., 4.])], 2.0, 1).unwrap();
        let t = model.to_tensor().unwrap();
        assert_eq!(t.dims(), &[1, 2, 2]);
        assert_eq!(t.values(), &[1., 3., 2., 4.]);
        assert_eq!(LinearEvidence::from_tensor(&t, 2.0, 1).unwrap(), model);
    }

    #[test]
    fn match_fraction_examples() {
        let reference = Image::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let model = MatchFraction::new(reference.clone());
        let batch = [
            reference,
            Image::new(1, 2, 1, vec![0.0, 0.0]).unwrap(),
            Image::new(1, 2, 1, vec![1.0, 0.0]).unwrap(),
        ];
        assert_eq!(
            model.predict(&batch).unwrap(),
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]
        );
    }

    proptest::proptest! {
        #[test]
        fn linear_outputs_are_distributions(
            weights in proptest::collection::vec(-50.0f64..50.0, 12),
            pixels in proptest::collection::vec(0.0f64..1.0, 12),
            temperature in 0.05f64..10.0,
        ) {
            let w: Vec<AttributionMap> = weights.chunks(4).map(|c| map(2, 2, c)).collect();
            let model = LinearEvidence::new(w, temperature, 3).unwrap();
            let img = Image::new(2, 2, 3, pixels).unwrap();
            let p = model.predict(&[img]).unwrap();
            proptest::prop_assert!(p[0].iter().all(|x| (0.0..=1.0).contains(x)));
            proptest::prop_assert!((p[0].iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
