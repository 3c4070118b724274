use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::Image;

/// The information-free image pixels are moved into or out of.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineSpec {
    /// Independent draws from a normal distribution fitted per channel.
    Normal {
        seed: u64,
    },
    Constant {
        value: f64,
    },
}

impl BaselineSpec {
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            BaselineSpec::Normal { .. } => BaselineSpec::Normal { seed },
            other => other,
        }
    }
}

/// Per-channel mean and population standard deviation over all pixels.
/// A constant channel reports its value exactly with zero spread.
fn channel_moments(image: &Image) -> Vec<(f64, f64)> {
    let d = image.channels();
    let n = image.pixel_count() as f64;
    (0..d)
        .map(|c| {
            let values = || image.values().iter().skip(c).step_by(d);
            let first = *values().next().expect("image has pixels");
            if values().all(|&v| v == first) {
                return (first, 0.0);
            }
            let mean = values().sum::<f64>() / n;
            let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

pub fn make_baseline(image: &Image, spec: &BaselineSpec) -> Result<Image> {
    let (h, w, d) = image.shape();
    match *spec {
        BaselineSpec::Constant { value } => Image::filled(h, w, d, value),
        BaselineSpec::Normal { seed } => {
            let moments = channel_moments(image);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut values = Vec::with_capacity(h * w * d);
            for _ in 0..h * w {
                for &(mean, std) in &moments {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    values.push(mean + std * z);
                }
            }
            Image::new(h, w, d, values)
        }
    }
}
