use core::f64::consts::FRAC_1_SQRT_2;

use super::PerformanceFunction;
use crate::Result;

/// Two-dimensional limit state with four separated failure regions.
pub fn four_mode_g(u1: f64, u2: f64) -> f64 {
    let diff = u1 - u2;
    let sum = (u1 + u2) * FRAC_1_SQRT_2;
    let offset = 7.0 * FRAC_1_SQRT_2 + 2.0;
    let b1 = 0.1 * diff * diff - sum + 5.0;
    let b2 = 0.1 * diff * diff + sum + 5.0;
    let b3 = diff + offset;
    let b4 = -diff + offset;
    b1.min(b2).min(b3).min(b4)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FourMode;

impl PerformanceFunction for FourMode {
    fn dim(&self) -> usize {
        2
    }

    fn evaluate(&self, u: &[f64]) -> Result<f64> {
        Ok(four_mode_g(u[0], u[1]))
    }
}
