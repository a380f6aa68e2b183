//! Expansion optimal linear estimation of a 2-D standard Gaussian field with
//! squared-exponential covariance.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, sqrt};

use super::kl::ModeBasis;
use crate::linalg::symmetric_eigen_desc;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct EoleField {
    corr_len: f64,
    grid: Vec<[f64; 2]>,
    /// Eigenvalues `l_i` of `C_ξξ`, descending, retained modes only.
    eigvals: Vec<f64>,
    /// `eigvecs[i]` is the unit eigenvector `φ_i` over the grid points.
    eigvecs: Vec<Vec<f64>>,
}

impl EoleField {
    /// Regular grid with `per_side` points along each axis of `[lo, hi]²`.
    pub fn on_square(lo: f64, hi: f64, per_side: usize, n_modes: usize, corr_len: f64) -> Result<Self> {
        if per_side < 2 {
            return Err(Error::invalid("EOLE grid needs at least two points per side"));
        }
        let step = (hi - lo) / (per_side - 1) as f64;
        let mut grid = Vec::with_capacity(per_side * per_side);
        for j in 0..per_side {
            for i in 0..per_side {
                grid.push([lo + i as f64 * step, lo + j as f64 * step]);
            }
        }
        Self::new(grid, n_modes, corr_len)
    }

    pub fn new(grid: Vec<[f64; 2]>, n_modes: usize, corr_len: f64) -> Result<Self> {
        if corr_len <= 0.0 {
            return Err(Error::invalid("correlation length must be positive"));
        }
        let n = grid.len();
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cov[i * n + j] = kernel(grid[i], grid[j], corr_len);
            }
        }
        let (vals, vecs) = symmetric_eigen_desc(n, &cov);
        let available = vals.iter().take_while(|&&v| v > 0.0).count();
        if n_modes > available {
            return Err(Error::InsufficientModes {
                requested: n_modes,
                available,
            });
        }
        let eigvecs = (0..n_modes).map(|m| (0..n).map(|j| vecs[j * n + m]).collect()).collect();
        Ok(EoleField {
            corr_len,
            grid,
            eigvals: vals[..n_modes].to_vec(),
            eigvecs,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.eigvals.len()
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn grid(&self) -> &[[f64; 2]] {
        &self.grid
    }

    /// Table of `φ_iᵀ C_xξ / sqrt(l_i)` at the given points, so that
    /// `f̂(x) = Σ_i basis[x][i] U_i`.
    pub fn basis_at(&self, points: &[[f64; 2]]) -> ModeBasis {
        let d = self.n_modes();
        let mut data = vec![0.0; points.len() * d];
        let mut cx = vec![0.0; self.grid.len()];
        for (p, &x) in points.iter().enumerate() {
            for (c, &xi) in cx.iter_mut().zip(&self.grid) {
                *c = kernel(x, xi, self.corr_len);
            }
            for m in 0..d {
                let proj: f64 = cx.iter().zip(&self.eigvecs[m]).map(|(a, b)| a * b).sum();
                data[p * d + m] = proj / sqrt(self.eigvals[m]);
            }
        }
        ModeBasis::from_raw(points.len(), d, data)
    }

    /// `Var[f̂(x)] / Var[f(x)]` at each point.
    pub fn variance_capture_at(&self, points: &[[f64; 2]]) -> Vec<f64> {
        self.basis_at(points).pointwise_variance()
    }
}

#[inline]
fn kernel(a: [f64; 2], b: [f64; 2], corr_len: f64) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    exp(-(dx * dx + dy * dy) / (corr_len * corr_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> EoleField {
        EoleField::on_square(-0.5, 0.5, 11, 100, 0.2).unwrap()
    }

    #[test]
    fn variance_capture_above_99_percent() {
        let f = field();
        let mut probes = Vec::new();
        for j in 0..41 {
            for i in 0..41 {
                probes.push([-0.5 + i as f64 / 40.0, -0.5 + j as f64 / 40.0]);
            }
        }
        let cap = f.variance_capture_at(&probes);
        let worst = cap.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(worst >= 0.99, "worst capture {worst}");
        assert!(cap.iter().all(|&c| c <= 1.0 + 1e-9));
    }

    #[test]
    fn eigenvalues_positive_descending() {
        let f = field();
        assert_eq!(f.grid().len(), 121);
        assert!(f.eigvals().iter().all(|&l| l > 0.0));
        assert!(f.eigvals().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn exact_at_grid_points_with_all_modes() {
        // Keeping every positive mode, EOLE interpolates the grid covariance.
        let f = EoleField::on_square(0.0, 1.0, 4, 16, 0.5).unwrap();
        let b = f.basis_at(f.grid());
        for v in b.pointwise_variance() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }
}
