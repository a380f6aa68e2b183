//! Soft indicator, weight diagnostics and the smoothing-parameter search.

use alloc::vec::Vec;

use libm::{exp, log, sqrt};

use crate::special::{log_normal_cdf, normal_cdf};
use crate::{Error, Result};

const PROBES: usize = 60;
const PROBE_SPAN: f64 = 1e-4;
const GOLDEN_REL_WIDTH: f64 = 1e-3;

/// `Φ(-ĝ/σ)` elementwise.
pub fn soft_indicator(g_hat: &[f64], sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "smoothing parameter must be positive");
    g_hat.iter().map(|g| normal_cdf(-g / sigma)).collect()
}

/// Sample standard deviation (`n - 1`) over sample mean.
pub fn cov_of_weights(w: &[f64]) -> Result<f64> {
    let n = w.len();
    if n < 2 {
        return Err(Error::invalid("coefficient of variation needs at least two weights"));
    }
    let mean = w.iter().sum::<f64>() / n as f64;
    if !(mean > 0.0) {
        return Err(Error::ZeroMean);
    }
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(sqrt(var) / mean)
}

/// CoV of `W_i = Φ(-ĝ_i/σ) · exp(log_lr_i)`, evaluated in log space and
/// rescaled by the largest weight. `None` if every weight vanishes.
pub fn weight_cov(g_hat: &[f64], log_lr: &[f64], sigma: f64) -> Option<f64> {
    debug_assert_eq!(g_hat.len(), log_lr.len());
    let logs: Vec<f64> = g_hat
        .iter()
        .zip(log_lr)
        .map(|(g, l)| log_normal_cdf(-g / sigma) + l)
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let w: Vec<f64> = logs.iter().map(|l| exp(l - top)).collect();
    cov_of_weights(&w).ok()
}

/// Smoothing parameter in `(0, σ_prev]` whose weight CoV is closest to `target`.
///
/// Weights are `Φ(-ĝ_i/σ) · p/q_t`, passed as log likelihood ratios. A
/// log-spaced scan over four decades below `σ_prev` brackets the best probe,
/// then golden-section search in `ln σ` narrows it.
pub fn select_sigma(g_hat: &[f64], log_lr: &[f64], sigma_prev: f64, target: f64) -> Result<f64> {
    if !(sigma_prev > 0.0) || !sigma_prev.is_finite() {
        return Err(Error::invalid("previous smoothing parameter must be positive and finite"));
    }
    if g_hat.len() != log_lr.len() {
        return Err(Error::invalid("one likelihood ratio per surrogate value is required"));
    }
    let objective = |ln_s: f64| weight_cov(g_hat, log_lr, exp(ln_s)).map(|c| (c - target) * (c - target));

    let hi = log(sigma_prev);
    let lo = hi + log(PROBE_SPAN);
    let step = (hi - lo) / (PROBES - 1) as f64;
    let grid: Vec<f64> = (0..PROBES).map(|j| if j + 1 == PROBES { hi } else { lo + step * j as f64 }).collect();
    let mut best: Option<(usize, f64)> = None;
    for (j, &x) in grid.iter().enumerate() {
        if let Some(f) = objective(x) {
            if best.map_or(true, |(_, b)| f < b) {
                best = Some((j, f));
            }
        }
    }
    let (j, f_best) = best.ok_or(Error::SigmaCollapse)?;

    let mut a = grid[j.saturating_sub(1)];
    let mut b = grid[(j + 1).min(PROBES - 1)];
    let phi = 0.5 * (sqrt(5.0) - 1.0);
    let eval = |x: f64| objective(x).unwrap_or(f64::INFINITY);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    // relative width in σ is exp(b - a) - 1
    while exp(b - a) - 1.0 > GOLDEN_REL_WIDTH {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = eval(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = eval(x2);
        }
    }
    let mid = 0.5 * (a + b);
    let chosen = if eval(mid) <= f_best { mid } else { grid[j] };
    Ok(exp(chosen).min(sigma_prev))
}

/// Stopping diagnostic: CoV of `1{ĝ_i <= 0} / max(h_i, ε_h)`, or `+∞` when no
/// candidate is predicted to fail.
pub fn stopping_diagnostic(g_hat: &[f64], h: &[f64], eps_h: f64) -> f64 {
    assert_eq!(g_hat.len(), h.len(), "one soft-indicator value per candidate");
    if !g_hat.iter().any(|&g| g <= 0.0) {
        return f64::INFINITY;
    }
    let w: Vec<f64> = g_hat
        .iter()
        .zip(h)
        .map(|(&g, &h)| if g <= 0.0 { 1.0 / h.max(eps_h) } else { 0.0 })
        .collect();
    cov_of_weights(&w).unwrap_or(f64::INFINITY)
}
