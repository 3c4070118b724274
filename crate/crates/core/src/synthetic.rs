//! Synthetic benchmark with known ground truth.
//!
//! A two-class linear-evidence model whose class-0 weights are the true
//! importance. Each sample pairs a random positive image with an ensemble
//! of noisy copies of the true weights: every member adds Gaussian noise
//! and, on a few random pixels, a large positive artifact. Artifacts make
//! members disagree exactly where the mean is least trustworthy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backend::LinearEvidence;
use crate::error::Result;
use crate::fidelity::{Explanation, Sample};
use crate::types::{AttributionMap, Ensemble, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkParams {
    pub height: usize,
    pub width: usize,
    pub members: usize,
    pub samples: usize,
    /// Gaussian noise, relative to the spread of the true weights.
    pub noise: f64,
    /// Probability that a member carries an artifact on a given pixel.
    pub artifact_rate: f64,
    /// Artifact height, relative to the largest true weight.
    pub artifact_scale: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            members: 7,
            samples: 16,
            noise: 0.5,
            artifact_rate: 0.05,
            artifact_scale: 1.0,
            temperature: 8.0,
            seed: 0,
        }
    }
}

pub struct Benchmark {
    pub model: LinearEvidence,
    pub true_weights: AttributionMap,
    pub samples: Vec<Sample>,
}

fn std_of(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn generate(params: &BenchmarkParams) -> Result<Benchmark> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (h, w) = (params.height, params.width);
    let pixels = h * w;

    let truth: Vec<f64> = (0..pixels).map(|_| rng.random::<f64>().powi(3)).collect();
    let spread = std_of(&truth).max(f64::MIN_POSITIVE);
    let peak = truth.iter().copied().fold(0.0, f64::max);
    let true_weights = AttributionMap::new(h, w, truth.clone())?;
    let model = LinearEvidence::new(
        vec![
            true_weights.clone(),
            AttributionMap::new(h, w, vec![0.0; pixels])?,
        ],
        params.temperature,
        1,
    )?;

    let mut samples = Vec::with_capacity(params.samples);
    for s in 0..params.samples {
        let image = Image::new(
            h,
            w,
            1,
            (0..pixels).map(|_| rng.random_range(0.5..1.0)).collect(),
        )?;
        let members = (0..params.members)
            .map(|_| {
                let values = truth
                    .iter()
                    .map(|&t| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let artifact = if rng.random::<f64>() < params.artifact_rate {
                            params.artifact_scale * peak
                        } else {
                            0.0
                        };
                        t + params.noise * spread * z + artifact
                    })
                    .collect();
                AttributionMap::new(h, w, values)
            })
            .collect::<Result<Vec<_>>>()?;
        let names = (0..params.members)
            .map(|m| Some(format!("member{m}")))
            .collect();
        samples.push(Sample {
            id: format!("sample{s}"),
            explanation: Explanation::Ensemble(Ensemble::with_names(members, names)?),
            image,
            class: 0,
        });
    }
    Ok(Benchmark {
        model,
        true_weights,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let p = BenchmarkParams {
            samples: 2,
            ..Default::default()
        };
        let a = generate(&p).unwrap();
        let b = generate(&p).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn shapes() {
        let p = BenchmarkParams {
            height: 3,
            width: 5,
            members: 4,
            samples: 2,
            ..Default::default()
        };
        let b = generate(&p).unwrap();
        assert_eq!(b.samples.len(), 2);
        match &b.samples[0].explanation {
            Explanation::Ensemble(e) => {
                assert_eq!(e.len(), 4);
                assert_eq!(e.shape(), (3, 5));
            }
            _ => panic!("expected ensemble"),
        }
    }
}
