//! Truncated Karhunen-Loève expansion of a 1-D Gaussian field with
//! exponential covariance, computed by the Nyström method.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, sqrt};

use crate::linalg::symmetric_eigen_desc;
use crate::{Error, Result};

/// Mode values `sqrt(ν_m) θ_m(x_p)` tabulated at a set of evaluation points.
///
/// A field realization is `mean + std * Σ_m basis[p][m] u_m`.
#[derive(Clone, Debug)]
pub struct ModeBasis {
    n_points: usize,
    n_modes: usize,
    data: Vec<f64>,
}

impl ModeBasis {
    pub(crate) fn from_raw(n_points: usize, n_modes: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n_points * n_modes);
        ModeBasis { n_points, n_modes, data }
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    #[inline]
    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.n_modes..(p + 1) * self.n_modes]
    }

    /// `out[p] = Σ_m basis[p][m] u[m]`.
    pub fn combine(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.n_modes);
        assert_eq!(out.len(), self.n_points);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.n_modes)) {
            *o = row.iter().zip(u).map(|(b, x)| b * x).sum();
        }
    }

    /// Pointwise variance of the truncated expansion, `Σ_m basis[p][m]²`.
    pub fn pointwise_variance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.n_modes)
            .map(|row| row.iter().map(|b| b * b).sum())
            .collect()
    }
}

/// Karhunen-Loève eigenpairs of the kernel `exp(-|x - y| / λ_c)` on an interval,
/// scaled by a mean `μ_Z` and standard deviation `σ_Z`.
#[derive(Clone, Debug)]
pub struct Kl1dField {
    pub mean: f64,
    pub std: f64,
    pub corr_len: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Correlation-operator eigenvalues, descending.
    eigvals: Vec<f64>,
    /// `eigfuncs[m][j] = θ_m(nodes[j])`, orthonormal in `L2` of the interval.
    eigfuncs: Vec<Vec<f64>>,
}

impl Kl1dField {
    /// Nyström discretization on `nodes` (sorted, trapezoid weights).
    pub fn exponential(n_modes: usize, corr_len: f64, nodes: &[f64], mean: f64, std: f64) -> Result<Self> {
        if corr_len <= 0.0 {
            return Err(Error::invalid("correlation length must be positive"));
        }
        let n = nodes.len();
        if n < 2 || n_modes > n {
            return Err(Error::InsufficientModes {
                requested: n_modes,
                available: n,
            });
        }
        let mut weights = vec![0.0; n];
        for j in 0..n - 1 {
            let h = nodes[j + 1] - nodes[j];
            weights[j] += 0.5 * h;
            weights[j + 1] += 0.5 * h;
        }
        let sw: Vec<f64> = weights.iter().map(|&w| sqrt(w)).collect();
        let mut sym = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                sym[i * n + j] = sw[i] * exp(-(nodes[i] - nodes[j]).abs() / corr_len) * sw[j];
            }
        }
        let (vals, vecs) = symmetric_eigen_desc(n, &sym);
        let tol = 1e-14 * vals[0];
        let available = vals.iter().take_while(|&&v| v > tol).count();
        if available < n_modes {
            return Err(Error::InsufficientModes {
                requested: n_modes,
                available,
            });
        }
        let eigfuncs = (0..n_modes)
            .map(|m| (0..n).map(|j| vecs[j * n + m] / sw[j]).collect())
            .collect();
        Ok(Kl1dField {
            mean,
            std,
            corr_len,
            nodes: nodes.to_vec(),
            weights,
            eigvals: vals[..n_modes].to_vec(),
            eigfuncs,
        })
    }

    /// Gaussian log-field for a lognormal coefficient with the given mean and
    /// standard deviation on `(0, 1)`.
    pub fn lognormal(n_modes: usize, corr_len: f64, mean_a: f64, std_a: f64, nodes: &[f64]) -> Result<Self> {
        if mean_a <= 0.0 || std_a < 0.0 {
            return Err(Error::invalid("lognormal moments must satisfy mean > 0, std >= 0"));
        }
        let var = log(1.0 + std_a * std_a / (mean_a * mean_a));
        Kl1dField::exponential(n_modes, corr_len, nodes, log(mean_a) - 0.5 * var, sqrt(var))
    }

    pub fn n_modes(&self) -> usize {
        self.eigvals.len()
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn eigfunc(&self, m: usize) -> &[f64] {
        &self.eigfuncs[m]
    }

    /// Quadrature weights associated with the nodes.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Fraction of the integrated field variance carried by the retained modes.
    pub fn variance_capture(&self) -> f64 {
        let len = self.nodes[self.nodes.len() - 1] - self.nodes[0];
        self.eigvals.iter().sum::<f64>() / len
    }

    /// Mode table `sqrt(ν_m) θ_m(x)` at arbitrary points, using the Nyström
    /// interpolation `θ(x) = (1/ν) Σ_j w_j c(x, x_j) θ(x_j)`.
    pub fn basis_at(&self, points: &[f64]) -> ModeBasis {
        let d = self.n_modes();
        let mut data = vec![0.0; points.len() * d];
        let mut kernel = vec![0.0; self.nodes.len()];
        for (p, &x) in points.iter().enumerate() {
            for (k, (&xj, &wj)) in kernel.iter_mut().zip(self.nodes.iter().zip(&self.weights)) {
                *k = wj * exp(-(x - xj).abs() / self.corr_len);
            }
            for m in 0..d {
                let proj: f64 = kernel.iter().zip(&self.eigfuncs[m]).map(|(k, t)| k * t).sum();
                data[p * d + m] = proj / sqrt(self.eigvals[m]);
            }
        }
        ModeBasis::from_raw(points.len(), d, data)
    }
}

pub(crate) fn uniform_nodes(intervals: usize) -> Vec<f64> {
    (0..=intervals).map(|i| i as f64 / intervals as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diffusion_field() -> Kl1dField {
        Kl1dField::lognormal(100, 0.01, 1.0, 0.1, &uniform_nodes(512)).unwrap()
    }

    #[test]
    fn captures_about_81_percent() {
        let f = diffusion_field();
        let ratio = f.variance_capture();
        assert!((ratio - 0.81).abs() <= 0.02, "capture ratio {ratio}");
        // truncation bound: Σ ν_m σ_Z² <= σ_Z² |D|
        assert!(ratio <= 1.0);
        assert!(f.eigvals().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn lognormal_moments() {
        let f = diffusion_field();
        let var = log(1.01);
        assert!((f.std * f.std - var).abs() < 1e-15);
        assert!((f.mean - (-0.5 * var)).abs() < 1e-15);
    }

    #[test]
    fn eigenfunctions_are_orthonormal() {
        let f = Kl1dField::exponential(10, 0.1, &uniform_nodes(256), 0.0, 1.0).unwrap();
        for a in 0..10 {
            for b in 0..10 {
                let ip: f64 = (0..f.nodes.len())
                    .map(|j| f.weights[j] * f.eigfunc(a)[j] * f.eigfunc(b)[j])
                    .sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nystrom_interpolation_reproduces_nodes() {
        let f = Kl1dField::exponential(20, 0.1, &uniform_nodes(128), 0.0, 1.0).unwrap();
        let b = f.basis_at(f.nodes());
        for j in [0usize, 17, 64, 128] {
            for m in 0..20 {
                let want = sqrt(f.eigvals()[m]) * f.eigfunc(m)[j];
                assert!((b.row(j)[m] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_coefficients_give_the_mean_field() {
        let f = diffusion_field();
        let b = f.basis_at(&[0.1, 0.5, 0.9]);
        let mut out = [1.0; 3];
        b.combine(&[0.0; 100], &mut out);
        assert!(out.iter().all(|&z| f.mean + f.std * z == f.mean));
    }

    #[test]
    fn too_many_modes_is_an_error() {
        assert!(matches!(
            Kl1dField::exponential(20, 0.1, &uniform_nodes(8), 0.0, 1.0),
            Err(Error::InsufficientModes { .. })
        ));
    }
}
