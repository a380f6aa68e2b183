//! Special functions needed by the proposal family and the soft indicator.

use core::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::{erfc, lgamma, log, log1p, sqrt};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Standard normal cumulative distribution function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, accurate deep into the lower tail where `Φ` underflows.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return log(normal_cdf(x));
    }
    // Mills-ratio asymptotic series.
    let z2 = 1.0 / (x * x);
    let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2;
    -0.5 * x * x - 0.5 * LN_2PI - log(-x) + log(series)
}

/// `ln Γ(x)` for `x > 0`.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    lgamma(x)
}

/// Natural log of the modified Bessel function of the first kind `I_ν(x)`,
/// for `ν >= 0` and `x > 0`.
///
/// Large orders use the uniform (Debye) asymptotic expansion, which stays
/// accurate for every `x`. Small orders use the power series up to moderate
/// arguments and the Hankel expansion beyond.
pub fn log_bessel_i(nu: f64, x: f64) -> f64 {
    debug_assert!(nu >= 0.0 && x > 0.0);
    if nu >= 15.0 {
        log_bessel_i_debye(nu, x)
    } else if x <= 500.0 {
        log_bessel_i_series(nu, x)
    } else {
        log_bessel_i_hankel(nu, x)
    }
}

fn log_bessel_i_series(nu: f64, x: f64) -> f64 {
    // I_ν(x) = (x/2)^ν Σ_j (x²/4)^j / (j! Γ(ν+j+1)); all terms positive.
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut j = 0.0;
    loop {
        j += 1.0;
        term *= q / (j * (nu + j));
        sum += term;
        if term < sum * 1e-17 && j > q.min(1.0) {
            break;
        }
    }
    nu * log(0.5 * x) - ln_gamma(nu + 1.0) + log(sum)
}

fn log_bessel_i_hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 {
            break;
        }
    }
    x - 0.5 * log(2.0 * PI * x) + log(sum)
}

fn log_bessel_i_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let s = sqrt(1.0 + z * z);
    let p = 1.0 / s;
    // η = √(1+z²) + ln(z / (1 + √(1+z²)))
    let eta = s + log(z) - log1p(s);
    let p2 = p * p;
    let u1 = p * (3.0 - 5.0 * p2) / 24.0;
    let u2 = p2 * (81.0 - 462.0 * p2 + 385.0 * p2 * p2) / 1152.0;
    let u3 = p * p2 * (30375.0 - 369_603.0 * p2 + 765_765.0 * p2 * p2 - 425_425.0 * p2 * p2 * p2)
        / 414_720.0;
    let p4 = p2 * p2;
    let u4 = p4
        * (4_465_125.0 - 94_121_676.0 * p2 + 349_922_430.0 * p4 - 446_185_740.0 * p4 * p2
            + 185_910_725.0 * p4 * p4)
        / 39_813_120.0;
    let inv = 1.0 / nu;
    let series = 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * u4)));
    nu * eta - 0.5 * log(2.0 * PI * nu) + 0.5 * log(p) + log(series)
}

/// `ln` of the surface area of the unit sphere `S^{d-1}`.
pub fn ln_sphere_area(dim: usize) -> f64 {
    let half = 0.5 * dim as f64;
    core::f64::consts::LN_2 + half * log(PI) - ln_gamma(half)
}
