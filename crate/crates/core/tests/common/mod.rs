//! Oracles and fixtures shared by the integration tests.
//!
//! Everything numeric here is implemented independently of the library so
//! that agreement is evidence rather than tautology.

#![allow(dead_code)]

use std::f64::consts::{PI, SQRT_2};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use salens_core::backend::{BackendError, BackendInfo, ModelBackend};
use salens_core::{AttributionMap, Ensemble, Image};

/// erf via the all-positive series erf(x) = 2/sqrt(pi) e^{-x^2} sum 2^n x^{2n+1} / (2n+1)!!.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs() {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / PI.sqrt() * (-x * x).exp() * sum
}

/// erfc for x >= 2 via the Laplace continued fraction, evaluated with
/// modified Lentz.
fn erfc_fraction(x: f64) -> f64 {
    // erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..10_000 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / PI.sqrt() / f
}

pub fn oracle_erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - oracle_erfc(-x)
    } else if x < 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_fraction(x)
    }
}

pub fn oracle_cdf(x: f64) -> f64 {
    0.5 * oracle_erfc(-x / SQRT_2)
}

pub fn oracle_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn oracle_pi(d: f64, sigma: f64) -> f64 {
    oracle_cdf(d / sigma)
}

pub fn oracle_ei(d: f64, sigma: f64) -> f64 {
    let z = d / sigma;
    oracle_cdf(z) * d + sigma * oracle_pdf(z)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    struct Panel {
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
    }
    fn simpson(h: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse<F: Fn(f64) -> f64>(f: &F, p: Panel, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (p.a + p.b);
        let (lm, rm) = (0.5 * (p.a + m), 0.5 * (m + p.b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(m - p.a, p.fa, flm, p.fm);
        let right = simpson(p.b - m, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        let l = Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
        };
        let r = Panel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
        };
        recurse(f, l, tol / 2.0, depth - 1) + recurse(f, r, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = simpson(b - a, fa, fm, fb);
    recurse(
        &f,
        Panel {
            a,
            b,
            fa,
            fm,
            fb,
            whole,
        },
        tol,
        50,
    )
}

/// Stable argsort ascending.
pub fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    idx
}

pub fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, std: f64) -> AttributionMap {
    let normal = Normal::new(0.0, std).unwrap();
    AttributionMap::new(h, w, (0..h * w).map(|_| normal.sample(rng)).collect()).unwrap()
}

pub fn random_ensemble(rng: &mut ChaCha8Rng, members: usize, h: usize, w: usize) -> Ensemble {
    let members = (0..members).map(|_| random_map(rng, h, w, 1.0)).collect();
    Ensemble::new(members).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> Image {
    Image::new(
        h,
        w,
        d,
        (0..h * w * d).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

/// Wraps a backend and records every image it is asked about.
pub struct Recorder<B> {
    pub inner: B,
    pub seen: Mutex<Vec<Image>>,
}

impl<B> Recorder<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn take(&self) -> Vec<Image> {
        std::mem::take(&mut self.seen.lock().unwrap())
    }
}

impl<B: ModelBackend> ModelBackend for Recorder<B> {
    fn info(&self) -> BackendInfo {
        self.inner.info()
    }

    fn predict(&self, batch: &[Image]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.seen.lock().unwrap().extend_from_slice(batch);
        self.inner.predict(batch)
    }
}

pub fn bits(image: &Image) -> Vec<u64> {
    image.values().iter().map(|v| v.to_bits()).collect()
}
