use alloc::vec;
use alloc::vec::Vec;

use libm::exp;
use serde::{Deserialize, Serialize};

use super::kl::{uniform_nodes, Kl1dField, ModeBasis};
use super::PerformanceFunction;
use crate::linalg::solve_tridiagonal;
use crate::{Error, Result};

/// `y_t - ν y_xx + γ y³ = f(x; u)` on `(0, T] x (0, 1)`, zero boundary and
/// initial data, lognormal source around a Gaussian bump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemilinearHeatParams {
    pub modes: usize,
    pub corr_len: f64,
    pub sigma_f: f64,
    pub nu: f64,
    pub gamma: f64,
    pub t_final: f64,
    /// Interior grid points.
    pub n_x: usize,
    pub n_t: usize,
    /// Intervals of the Nyström grid the KL eigenpairs are computed on.
    pub kl_intervals: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub obs_lo: f64,
    pub obs_hi: f64,
    pub threshold: f64,
}

impl Default for SemilinearHeatParams {
    fn default() -> Self {
        SemilinearHeatParams {
            modes: 100,
            corr_len: 0.1,
            sigma_f: 0.6,
            nu: 0.02,
            gamma: 1.0,
            t_final: 1.0,
            n_x: 256,
            n_t: 200,
            kl_intervals: 257,
            newton_tol: 1e-8,
            newton_max_iter: 12,
            obs_lo: 0.4,
            obs_hi: 0.6,
            threshold: 2.4,
        }
    }
}

/// Backward Euler in time, centered differences in space, Newton per step.
#[derive(Clone, Debug)]
pub struct SemilinearHeat {
    p: SemilinearHeatParams,
    basis: ModeBasis,
    /// `f0(x_i) exp(-σ_f² Var[Z_d(x_i)] / 2)`.
    mean_source: Vec<f64>,
    /// Weights of `∫_{obs} y dx` over the interior values.
    obs_weights: Vec<f64>,
}

impl SemilinearHeat {
    pub fn new(p: &SemilinearHeatParams) -> Result<Self> {
        if p.n_x < 2 || p.n_t < 1 || p.t_final <= 0.0 || p.obs_hi <= p.obs_lo {
            return Err(Error::invalid("semilinear heat: degenerate grid or observation window"));
        }
        let field = Kl1dField::exponential(p.modes, p.corr_len, &uniform_nodes(p.kl_intervals), 0.0, 1.0)?;
        let h = 1.0 / (p.n_x + 1) as f64;
        let xs: Vec<f64> = (1..=p.n_x).map(|i| i as f64 * h).collect();
        let basis = field.basis_at(&xs);
        let var = basis.pointwise_variance();
        let mean_source = xs
            .iter()
            .zip(&var)
            .map(|(&x, &v)| 5.0 * exp(-80.0 * (x - 0.5) * (x - 0.5)) * exp(-0.5 * p.sigma_f * p.sigma_f * v))
            .collect();
        let obs_weights = hat_integration_weights(p.n_x, p.obs_lo, p.obs_hi);
        Ok(SemilinearHeat {
            p: p.clone(),
            basis,
            mean_source,
            obs_weights,
        })
    }

    /// Source values at the interior grid points.
    pub fn source(&self, u: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.p.n_x];
        self.basis.combine(u, &mut z);
        z.iter()
            .zip(&self.mean_source)
            .map(|(&zi, &m)| m * exp(self.p.sigma_f * zi))
            .collect()
    }

    /// Time-and-space averaged temperature over the observation window.
    pub fn exposure(&self, source: &[f64]) -> Result<f64> {
        let p = &self.p;
        let n = p.n_x;
        let h = 1.0 / (n + 1) as f64;
        let dt = p.t_final / p.n_t as f64;
        let coupling = dt * p.nu / (h * h);
        let mut y = vec![0.0; n];
        let mut y_old = vec![0.0; n];
        let mut resid = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let off = vec![-coupling; n - 1];
        let observe = |y: &[f64]| -> f64 { y.iter().zip(&self.obs_weights).map(|(a, b)| a * b).sum() };
        // trapezoid in time; the t = 0 term vanishes
        let mut integral = 0.0;
        for step in 1..=p.n_t {
            y_old.copy_from_slice(&y);
            let mut converged = false;
            let mut last = f64::INFINITY;
            for _ in 0..p.newton_max_iter {
                for i in 0..n {
                    let left = if i > 0 { y[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { y[i + 1] } else { 0.0 };
                    let lap = left - 2.0 * y[i] + right;
                    resid[i] = -((y[i] - y_old[i]) - coupling * lap + dt * (p.gamma * y[i] * y[i] * y[i] - source[i]));
                    diag[i] = 1.0 + 2.0 * coupling + 3.0 * dt * p.gamma * y[i] * y[i];
                }
                solve_tridiagonal(&off, &diag, &off, &mut resid)?;
                let mut step_norm = 0.0f64;
                for (yi, di) in y.iter_mut().zip(&resid) {
                    *yi += di;
                    step_norm = step_norm.max(di.abs());
                }
                last = step_norm;
                if step_norm <= p.newton_tol {
                    converged = true;
                    break;
                }
            }
            if !converged || y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NewtonDivergence { step, residual: last });
            }
            let w = if step == p.n_t { 0.5 } else { 1.0 };
            integral += w * dt * observe(&y);
        }
        Ok(integral / (p.t_final * (p.obs_hi - p.obs_lo)))
    }
}

/// Weights `w_i` with `Σ_i w_i y_i = ∫_lo^hi y_h(x) dx` for the piecewise-linear
/// interpolant of interior values `y_1..y_n` on a uniform grid with zero ends.
fn hat_integration_weights(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let h = 1.0 / (n + 1) as f64;
    // node k in 0..=n+1, interior node i maps to k = i + 1
    let mut w = vec![0.0; n + 2];
    for k in 0..=n {
        let (x0, x1) = (k as f64 * h, (k + 1) as f64 * h);
        let s0 = x0.max(lo);
        let s1 = x1.min(hi);
        if s1 <= s0 {
            continue;
        }
        let len = s1 - s0;
        w[k] += 0.5 * len * ((x1 - s0) + (x1 - s1)) / h;
        w[k + 1] += 0.5 * len * ((s0 - x0) + (s1 - x0)) / h;
    }
    w[1..=n].to_vec()
}

impl PerformanceFunction for SemilinearHeat {
    fn dim(&self) -> usize {
        self.basis.n_modes()
    }

    fn evaluate(&self, u: &[f64]) -> Result<f64> {
        let f = self.source(u);
        Ok(self.p.threshold - self.exposure(&f)?)
    }
}
