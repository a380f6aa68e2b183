//! Accuracy and cost metrics over repeated runs.

use libm::sqrt;

use crate::{Error, Result};

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("mean of an empty sample"));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::invalid("sample variance needs at least two values"));
    }
    let m = mean(xs)?;
    Ok(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Coefficient of variation: sample standard deviation over sample mean.
pub fn coefficient_of_variation(xs: &[f64]) -> Result<f64> {
    let m = mean(xs)?;
    if !(m > 0.0) {
        return Err(Error::ZeroMean);
    }
    Ok(sqrt(sample_variance(xs)?) / m)
}

/// `|reference - mean| / reference`.
pub fn relative_error(mean_estimate: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::invalid("reference probability must be positive"));
    }
    Ok((reference - mean_estimate).abs() / reference)
}

/// Amortized true-model cost `M_0 / N_rep + m_add · mean(K_ad)`.
pub fn amortized_cost(m0: usize, n_rep: usize, m_add: usize, k_ad: &[usize]) -> Result<f64> {
    if n_rep == 0 || k_ad.is_empty() {
        return Err(Error::invalid("amortized cost needs at least one run"));
    }
    let mean_k = k_ad.iter().sum::<usize>() as f64 / k_ad.len() as f64;
    Ok(m0 as f64 / n_rep as f64 + m_add as f64 * mean_k)
}

/// Unamortized cost of a single surrogate-based run.
pub fn single_run_cost(m0: usize, m_add: usize, k_ad: usize) -> u64 {
    (m0 + m_add * k_ad) as u64
}

/// Coefficient of variation of a crude Monte Carlo estimate, `None` when no failure was seen.
pub fn cmc_cov(p_hat: f64, n: u64) -> Option<f64> {
    (p_hat > 0.0).then(|| sqrt((1.0 - p_hat) / (p_hat * n as f64)))
}
