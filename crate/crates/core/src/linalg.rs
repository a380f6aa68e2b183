//! Small dense/banded linear algebra kernels used by the PDE benchmarks.

use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use crate::{Error, Result};

/// Solves a tridiagonal system with the Thomas algorithm.
///
/// `lower[i]` couples row `i + 1` to row `i`, `upper[i]` couples row `i` to
/// row `i + 1`. The right-hand side is overwritten with the solution.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if rhs.len() != n || lower.len() + 1 != n || upper.len() + 1 != n {
        return Err(Error::invalid("tridiagonal band lengths do not match"));
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::Singular("zero pivot in tridiagonal solve"));
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i - 1] * c[i - 1];
        if beta == 0.0 {
            return Err(Error::Singular("zero pivot in tridiagonal solve"));
        }
        rhs[i] = (rhs[i] - lower[i - 1] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Symmetric positive definite band matrix stored by its lower band.
///
/// Entry `(i, j)` with `i - bw <= j <= i` lives at `data[i * (bw + 1) + (j + bw - i)]`.
#[derive(Clone, Debug)]
pub struct SpdBand {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SpdBand {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        SpdBand {
            n,
            bw: bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(i - j <= self.bw, "entry outside the band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// In-place banded Cholesky factorization followed by a solve.
    pub fn solve(mut self, rhs: &mut [f64]) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        if rhs.len() != n {
            return Err(Error::invalid("right-hand side length mismatch"));
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = self.data[self.idx(i, j)];
                for k in k0..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                let at = self.idx(i, j);
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::Singular("band matrix is not positive definite"));
                    }
                    self.data[at] = sqrt(s);
                } else {
                    self.data[at] = s / self.data[self.idx(j, j)];
                }
            }
        }
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[self.idx(i, k)] * rhs[k];
            }
            rhs[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.data[self.idx(k, i)] * rhs[k];
            }
            rhs[i] = s / self.data[self.idx(i, i)];
        }
        Ok(())
    }
}

/// Eigen-decomposition of a dense symmetric matrix given row-major.
///
/// Returns eigenvalues sorted in descending order and the matching
/// eigenvectors as columns of a row-major `n x n` buffer.
pub fn symmetric_eigen_desc(n: usize, matrix: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n);
    let m = nalgebra::DMatrix::from_row_slice(n, n, matrix);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &k) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = eig.eigenvectors[(row, k)];
        }
    }
    (values, vectors)
}
