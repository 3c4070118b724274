//! Restricted Boltzmann machine aggregation.
//!
//! One visible unit per ensemble member and a single hidden unit. Every
//! pixel is one training vector (its member values, each member linearly
//! scaled to [0, 1] first). Training is CD-1 with online updates, `iters`
//! passes over the pixels in row-major order. The output is the hidden
//! activation probability per pixel, flipped to `1 - p` when it correlates
//! negatively with the ensemble mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::normalization::normalize_linear;
use crate::types::{AttributionMap, Ensemble};

use super::{aggregate_average, require, AggregationSpec};

/// Initial standard deviation of the visible-hidden weights.
pub const DEFAULT_WEIGHT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    Zeros,
    Gaussian { std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbmConfig {
    pub alpha: f64,
    pub iters: usize,
    pub seed: u64,
    pub init: WeightInit,
}

impl RbmConfig {
    pub fn new(alpha: f64, iters: usize, seed: u64) -> Self {
        Self {
            alpha,
            iters,
            seed,
            init: WeightInit::Gaussian {
                std: DEFAULT_WEIGHT_STD,
            },
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Rbm {
    weights: Vec<f64>,
    visible_bias: Vec<f64>,
    hidden_bias: f64,
}

impl Rbm {
    fn new(visible: usize, init: WeightInit, rng: &mut ChaCha8Rng) -> Self {
        let weights = match init {
            WeightInit::Zeros => vec![0.0; visible],
            WeightInit::Gaussian { std } => {
                let normal = Normal::new(0.0, std).expect("finite, non-negative std");
                (0..visible).map(|_| normal.sample(rng)).collect()
            }
        };
        Self {
            weights,
            visible_bias: vec![0.0; visible],
            hidden_bias: 0.0,
        }
    }

    fn hidden_prob(&self, v: &[f64]) -> f64 {
        let act: f64 = self.weights.iter().zip(v).map(|(w, x)| w * x).sum();
        sigmoid(self.hidden_bias + act)
    }

    fn cd1_step(&mut self, v0: &[f64], v1: &mut [f64], alpha: f64, rng: &mut ChaCha8Rng) {
        let h0_prob = self.hidden_prob(v0);
        let h0 = if rng.random::<f64>() < h0_prob {
            1.0
        } else {
            0.0
        };
        for ((x, w), b) in v1.iter_mut().zip(&self.weights).zip(&self.visible_bias) {
            *x = sigmoid(b + w * h0);
        }
        let h1_prob = self.hidden_prob(v1);
        for i in 0..v0.len() {
            self.weights[i] += alpha * (v0[i] * h0_prob - v1[i] * h1_prob);
            self.visible_bias[i] += alpha * (v0[i] - v1[i]);
        }
        self.hidden_bias += alpha * (h0_prob - h1_prob);
    }
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx.sqrt() * syy.sqrt())
    }
}

pub fn aggregate_rbm(
    ensemble: &Ensemble,
    alpha: f64,
    iters: usize,
    seed: u64,
) -> Result<AttributionMap> {
    aggregate_rbm_with(ensemble, &RbmConfig::new(alpha, iters, seed))
}

pub fn aggregate_rbm_with(ensemble: &Ensemble, cfg: &RbmConfig) -> Result<AttributionMap> {
    AggregationSpec::Rbm {
        alpha: cfg.alpha,
        iters: cfg.iters,
        seed: cfg.seed,
    }
    .validate()?;
    require(ensemble, 2)?;

    let k = ensemble.len();
    let pixels = ensemble.pixel_count();
    let scaled: Vec<AttributionMap> = ensemble
        .members()
        .iter()
        .map(normalize_linear)
        .collect::<Result<_>>()?;
    // pixel-major training vectors
    let mut data = vec![0.0; pixels * k];
    for (j, m) in scaled.iter().enumerate() {
        for (p, &v) in m.values().iter().enumerate() {
            data[p * k + j] = v;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rbm = Rbm::new(k, cfg.init, &mut rng);
    let mut recon = vec![0.0; k];
    for _ in 0..cfg.iters {
        for v0 in data.chunks_exact(k) {
            rbm.cd1_step(v0, &mut recon, cfg.alpha, &mut rng);
        }
    }

    let mut out: Vec<f64> = data.chunks_exact(k).map(|v| rbm.hidden_prob(v)).collect();
    let mean = aggregate_average(ensemble)?;
    if pearson(&out, mean.values()) < 0.0 {
        out.iter_mut().for_each(|p| *p = 1.0 - *p);
    }
    ensemble.members()[0].with_values(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_ensemble(seed: u64, members: usize, pixels: usize) -> Ensemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ensemble::new(
            (0..members)
                .map(|_| {
                    AttributionMap::new(
                        1,
                        pixels,
                        (0..pixels).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn untrained_zero_network_outputs_half() {
        let e = random_ensemble(1, 4, 25);
        let cfg = RbmConfig {
            init: WeightInit::Zeros,
            ..RbmConfig::new(0.1, 0, 7)
        };
        let out = aggregate_rbm_with(&e, &cfg).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let e = random_ensemble(2, 5, 64);
        let a = aggregate_rbm(&e, 0.05, 10, 42).unwrap();
        let b = aggregate_rbm(&e, 0.05, 10, 42).unwrap();
        let same = a
            .values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same);
        let c = aggregate_rbm(&e, 0.05, 10, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn outputs_are_probabilities_aligned_with_mean() {
        for seed in 0..20 {
            let e = random_ensemble(100 + seed, 3, 49);
            let out = aggregate_rbm(&e, 0.1, 5, seed).unwrap();
            assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let mean = aggregate_average(&e).unwrap();
            assert!(pearson(out.values(), mean.values()) >= 0.0);
        }
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &p in &idx[i..=j] {
                r[p] = avg;
            }
            i = j + 1;
        }
        r
    }

    #[test]
    fn identical_members_give_non_negative_spearman() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shared: Vec<f64> = (0..36).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = AttributionMap::new(6, 6, shared.clone()).unwrap();
        let e = Ensemble::new(vec![m.clone(), m.clone(), m]).unwrap();
        for (alpha, iters) in [(0.01, 1), (0.1, 10), (1.0, 50)] {
            let out = aggregate_rbm(&e, alpha, iters, 11).unwrap();
            let rho = pearson(&ranks(out.values()), &ranks(&shared));
            assert!(rho >= 0.0, "alpha={alpha} iters={iters}: {rho}");
        }
    }

    #[test]
    fn pearson_degenerate_is_zero() {
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 3.0]), 0.0);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
    }
}
