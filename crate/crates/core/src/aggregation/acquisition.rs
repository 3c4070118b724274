//! Bayesian-optimization acquisition functions used as pixel aggregators.
//!
//! With improvement `d = mu - E+ - eps` and `Z = d / sigma`:
//!
//! - UCB: `mu + eps * sigma`
//! - PI:  `Phi(Z)`
//! - EI:  `Phi(Z) * d + sigma * phi(Z)`
//!
//! At `sigma = 0` PI and EI take their analytic limits, a step
//! (`d > 0 -> 1`, otherwise 0) and a hinge (`max(d, 0)`).

use crate::error::{Error, Result};
use crate::normal;
use crate::types::{AttributionMap, Ensemble};

use super::{pixel_stats, AggregationSpec, PixelStats};

pub fn pi_value(mean: f64, std: f64, best: f64, epsilon: f64) -> f64 {
    let d = mean - best - epsilon;
    if std == 0.0 {
        if d > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        normal::cdf(d / std)
    }
}

pub fn ei_value(mean: f64, std: f64, best: f64, epsilon: f64) -> f64 {
    let d = mean - best - epsilon;
    if std == 0.0 {
        d.max(0.0)
    } else {
        let z = d / std;
        normal::cdf(z) * d + std * normal::pdf(z)
    }
}

pub fn aggregate_ucb(stats: &PixelStats, epsilon: f64) -> Result<AttributionMap> {
    AggregationSpec::Ucb { epsilon }.validate()?;
    stats.map_pixels(|m, s| m + epsilon * s)
}

pub fn aggregate_pi(stats: &PixelStats, epsilon: f64) -> Result<AttributionMap> {
    AggregationSpec::Pi { epsilon }.validate()?;
    let best = stats.best();
    stats.map_pixels(|m, s| pi_value(m, s, best, epsilon))
}

pub fn aggregate_ei(stats: &PixelStats, epsilon: f64) -> Result<AttributionMap> {
    AggregationSpec::Ei { epsilon }.validate()?;
    let best = stats.best();
    stats.map_pixels(|m, s| ei_value(m, s, best, epsilon))
}

/// Contextual-improvement exploration rate: `sum(sigma^2) / (m * n * E+)`.
pub fn ci_epsilon(stats: &PixelStats) -> Result<f64> {
    let best = stats.best();
    if best <= 0.0 {
        return Err(Error::DegenerateContext { incumbent: best });
    }
    let mut sq: Vec<f64> = stats.std().values().iter().map(|s| s * s).collect();
    // summing in sorted order keeps the rate independent of pixel layout
    sq.sort_by(f64::total_cmp);
    let total: f64 = sq.iter().sum();
    Ok(total / (sq.len() as f64 * best))
}

/// EI with the contextual exploration rate. With `zero_fallback`, a
/// non-positive incumbent falls back to `eps = 0` instead of failing.
pub fn aggregate_ci(ensemble: &Ensemble, zero_fallback: bool) -> Result<AttributionMap> {
    let stats = pixel_stats(ensemble)?;
    let epsilon = match ci_epsilon(&stats) {
        Ok(eps) => eps,
        Err(Error::DegenerateContext { .. }) if zero_fallback => 0.0,
        Err(e) => return Err(e),
    };
    aggregate_ei(&stats, epsilon)
}

/// `n` evenly spaced exploration rates from `a` to `b` inclusive.
pub fn epsilon_grid(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(move |t| t as f64 * step + a)
}

fn averaged<F>(stats: &PixelStats, a: f64, b: f64, n: usize, f: F) -> Result<AttributionMap>
where
    F: Fn(f64, f64, f64, f64) -> f64,
{
    let best = stats.best();
    let grid: Vec<f64> = epsilon_grid(a, b, n).collect();
    stats.map_pixels(|m, s| grid.iter().map(|&eps| f(m, s, best, eps)).sum::<f64>() / n as f64)
}

/// Average probability of improvement over `n` rates spanning `[a, b]`.
pub fn aggregate_api(stats: &PixelStats, a: f64, b: f64, n: usize) -> Result<AttributionMap> {
    AggregationSpec::Api { a, b, n }.validate()?;
    averaged(stats, a, b, n, pi_value)
}

/// Average expected improvement over `n` rates spanning `[a, b]`.
pub fn aggregate_aei(stats: &PixelStats, a: f64, b: f64, n: usize) -> Result<AttributionMap> {
    AggregationSpec::Aei { a, b, n }.validate()?;
    averaged(stats, a, b, n, ei_value)
}
