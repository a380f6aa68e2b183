use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// A dense row-major set of `len` points in `R^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "points need a positive dimension");
        PointSet { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        assert!(dim > 0, "points need a positive dimension");
        PointSet {
            dim,
            data: Vec::with_capacity(dim * n),
        }
    }

    /// Wraps a flat row-major buffer. Panics if the length is not a multiple of `dim`.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "flat buffer does not hold whole rows");
        PointSet { dim, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Self {
        let mut set = PointSet::with_capacity(dim, rows.len());
        for r in rows {
            set.push(r.as_ref());
        }
        set
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.dim, "point dimension mismatch");
        self.data.extend_from_slice(p);
    }

    pub fn extend(&mut self, other: &PointSet) {
        assert_eq!(other.dim, self.dim, "point dimension mismatch");
        self.data.extend_from_slice(&other.data);
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> PointSet {
        let mut out = PointSet::with_capacity(self.dim, indices.len());
        for &i in indices {
            out.push(self.row(i));
        }
        out
    }
}
