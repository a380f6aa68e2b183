use alloc::vec;
use alloc::vec::Vec;

use libm::exp;
use serde::{Deserialize, Serialize};

use super::kl::{uniform_nodes, Kl1dField, ModeBasis};
use super::PerformanceFunction;
use crate::linalg::solve_tridiagonal;
use crate::{Error, Result};

/// `-(a y')' = 1` on `(0, 1)`, `y(0) = 0`, `a y'(1) = 0`, lognormal `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionParams {
    pub modes: usize,
    pub corr_len: f64,
    pub mean: f64,
    pub std: f64,
    /// Finite elements in the solver mesh.
    pub n_elements: usize,
    /// Intervals of the Nyström grid the KL eigenpairs are computed on.
    pub kl_intervals: usize,
    pub threshold: f64,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            modes: 100,
            corr_len: 0.01,
            mean: 1.0,
            std: 0.1,
            n_elements: 512,
            kl_intervals: 512,
            threshold: 0.535,
        }
    }
}

/// Piecewise-linear FEM solve with the coefficient sampled at element midpoints.
#[derive(Clone, Debug)]
pub struct Diffusion1d {
    field_mean: f64,
    field_std: f64,
    midpoints: ModeBasis,
    n_elements: usize,
    threshold: f64,
}

impl Diffusion1d {
    pub fn new(p: &DiffusionParams) -> Result<Self> {
        if p.n_elements < 2 {
            return Err(Error::invalid("diffusion mesh needs at least two elements"));
        }
        let field = Kl1dField::lognormal(p.modes, p.corr_len, p.mean, p.std, &uniform_nodes(p.kl_intervals))?;
        Ok(Self::with_field(&field, p.n_elements, p.threshold))
    }

    pub fn with_field(field: &Kl1dField, n_elements: usize, threshold: f64) -> Self {
        let h = 1.0 / n_elements as f64;
        let mids: Vec<f64> = (0..n_elements).map(|e| (e as f64 + 0.5) * h).collect();
        Diffusion1d {
            field_mean: field.mean,
            field_std: field.std,
            midpoints: field.basis_at(&mids),
            n_elements,
            threshold,
        }
    }

    /// Element-wise coefficient `a_e = exp(Z(x_e; u))`.
    pub fn coefficient(&self, u: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n_elements];
        self.midpoints.combine(u, &mut z);
        z.iter().map(|&s| exp(self.field_mean + self.field_std * s)).collect()
    }

    /// FEM solution at the right end, `y_h(1)`.
    pub fn tip_value(&self, u: &[f64]) -> Result<f64> {
        let a = self.coefficient(u);
        solve_tip(&a)
    }
}

/// Assembles and solves the tridiagonal P1 system for a piecewise-constant coefficient.
pub(crate) fn solve_tip(a: &[f64]) -> Result<f64> {
    let n = a.len();
    let h = 1.0 / n as f64;
    debug_assert!(a.iter().all(|&v| v > 0.0), "diffusion coefficient must be positive");
    // unknowns are nodes 1..=n
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    let mut rhs = vec![h; n];
    for i in 0..n {
        diag[i] = a[i] / h + if i + 1 < n { a[i + 1] / h } else { 0.0 };
    }
    for i in 0..n - 1 {
        off[i] = -a[i + 1] / h;
    }
    rhs[n - 1] = 0.5 * h;
    solve_tridiagonal(&off, &diag, &off, &mut rhs)?;
    Ok(rhs[n - 1])
}

impl PerformanceFunction for Diffusion1d {
    fn dim(&self) -> usize {
        self.midpoints.n_modes()
    }

    fn evaluate(&self, u: &[f64]) -> Result<f64> {
        Ok(self.threshold - self.tip_value(u)?)
    }
}
