use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, sqrt};
use serde::{Deserialize, Serialize};

use super::eole::EoleField;
use super::kl::ModeBasis;
use super::PerformanceFunction;
use crate::linalg::SpdBand;
use crate::{Error, Result};

type Pt = [f64; 2];

/// Steady heat conduction on `(-0.5, 0.5)²` with a lognormal conductivity,
/// a square heat source and the mean temperature over a target square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Heat2dParams {
    /// Squares per side of the structured mesh; each square holds two triangles.
    pub subdivisions: usize,
    pub modes: usize,
    pub corr_len: f64,
    /// EOLE grid points per side.
    pub eole_points: usize,
    pub mean: f64,
    pub std: f64,
    pub source: f64,
    pub source_lo: Pt,
    pub source_hi: Pt,
    pub target_lo: Pt,
    pub target_hi: Pt,
    pub threshold: f64,
}

impl Default for Heat2dParams {
    fn default() -> Self {
        Heat2dParams {
            subdivisions: 110,
            modes: 100,
            corr_len: 0.2,
            eole_points: 11,
            mean: 1.0,
            std: 0.3,
            source: 2000.0,
            source_lo: [0.2, 0.2],
            source_hi: [0.3, 0.3],
            target_lo: [-0.3, -0.3],
            target_hi: [-0.2, -0.2],
            threshold: 8.5,
        }
    }
}

impl Heat2dParams {
    /// `(a, b)` with `κ = exp(a + b f)` having the configured mean and std.
    pub fn lognormal_coefficients(&self) -> (f64, f64) {
        let var = log(1.0 + self.std * self.std / (self.mean * self.mean));
        (log(self.mean) - 0.5 * var, sqrt(var))
    }
}

/// Linear triangles on a structured mesh, banded Cholesky solve.
///
/// Free nodes are `(i, j)` with `1 <= i <= n-1`, `1 <= j <= n`, numbered
/// row by row, which gives a half-bandwidth of `n`.
#[derive(Clone, Debug)]
pub struct Heat2d {
    n: usize,
    threshold: f64,
    log_mean: f64,
    log_std: f64,
    centroids: ModeBasis,
    /// Free-node index of each local vertex, `usize::MAX` on the Dirichlet boundary.
    elements: Vec<[usize; 3]>,
    /// `∫ ∇φ_a · ∇φ_b` per element.
    stiffness: Vec<[[f64; 3]; 3]>,
    load: Vec<f64>,
    /// Output functional: mean over the target region is `Σ w_i T_i`.
    observe: Vec<f64>,
}

const FIXED: usize = usize::MAX;

impl Heat2d {
    pub fn new(p: &Heat2dParams) -> Result<Self> {
        let field = EoleField::on_square(-0.5, 0.5, p.eole_points, p.modes, p.corr_len)?;
        Self::with_field(p, &field)
    }

    pub fn with_field(p: &Heat2dParams, field: &EoleField) -> Result<Self> {
        let n = p.subdivisions;
        if n < 2 {
            return Err(Error::invalid("heat2d mesh needs at least two subdivisions"));
        }
        let h = 1.0 / n as f64;
        let node = |i: usize, j: usize| -> Pt { [-0.5 + i as f64 * h, -0.5 + j as f64 * h] };
        let free = |i: usize, j: usize| -> usize {
            if i == 0 || i == n || j == 0 {
                FIXED
            } else {
                (j - 1) * (n - 1) + (i - 1)
            }
        };
        let n_free = (n - 1) * n;
        let target_area = (p.target_hi[0] - p.target_lo[0]) * (p.target_hi[1] - p.target_lo[1]);
        if target_area <= 0.0 {
            return Err(Error::invalid("empty target region"));
        }

        let mut elements = Vec::with_capacity(2 * n * n);
        let mut stiffness = Vec::with_capacity(2 * n * n);
        let mut centroids = Vec::with_capacity(2 * n * n);
        let mut load = vec![0.0; n_free];
        let mut observe = vec![0.0; n_free];
        for j in 0..n {
            for i in 0..n {
                let quads = [
                    [(i, j), (i + 1, j), (i + 1, j + 1)],
                    [(i, j), (i + 1, j + 1), (i, j + 1)],
                ];
                for tri in quads {
                    let v = tri.map(|(a, b)| node(a, b));
                    let ids = tri.map(|(a, b)| free(a, b));
                    let shape = Shape::new(v);
                    let src = integrate_hats(&shape, &v, p.source_lo, p.source_hi);
                    let obs = integrate_hats(&shape, &v, p.target_lo, p.target_hi);
                    for k in 0..3 {
                        if ids[k] != FIXED {
                            load[ids[k]] += p.source * src[k];
                            observe[ids[k]] += obs[k] / target_area;
                        }
                    }
                    elements.push(ids);
                    stiffness.push(shape.stiffness());
                    centroids.push([(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0]);
                }
            }
        }
        let (log_mean, log_std) = p.lognormal_coefficients();
        Ok(Heat2d {
            n,
            threshold: p.threshold,
            log_mean,
            log_std,
            centroids: field.basis_at(&centroids),
            elements,
            stiffness,
            load,
            observe,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Element conductivities `exp(a + b f̂(centroid))`.
    pub fn conductivity(&self, u: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.elements.len()];
        self.centroids.combine(u, &mut f);
        f.iter().map(|&z| exp(self.log_mean + self.log_std * z)).collect()
    }

    /// Free-node temperatures for element-wise conductivities.
    pub fn solve(&self, kappa: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(kappa.len(), self.elements.len());
        let mut k = SpdBand::zeros(self.load.len(), self.n);
        for ((ids, ke), &c) in self.elements.iter().zip(&self.stiffness).zip(kappa) {
            for a in 0..3 {
                if ids[a] == FIXED {
                    continue;
                }
                for b in 0..3 {
                    if ids[b] == FIXED || ids[b] > ids[a] {
                        continue;
                    }
                    k.add(ids[a], ids[b], c * ke[a][b]);
                }
            }
        }
        let mut t = self.load.clone();
        k.solve(&mut t)?;
        Ok(t)
    }

    /// Mean temperature over the target region.
    pub fn target_mean(&self, kappa: &[f64]) -> Result<f64> {
        let t = self.solve(kappa)?;
        Ok(t.iter().zip(&self.observe).map(|(a, b)| a * b).sum())
    }
}

impl PerformanceFunction for Heat2d {
    fn dim(&self) -> usize {
        self.centroids.n_modes()
    }

    fn evaluate(&self, u: &[f64]) -> Result<f64> {
        let kappa = self.conductivity(u);
        Ok(self.threshold - self.target_mean(&kappa)?)
    }
}

/// Affine hat functions of one triangle, `φ_a(x) = c_a + g_a · x`.
struct Shape {
    area: f64,
    grad: [Pt; 3],
    offset: [f64; 3],
}

impl Shape {
    fn new(v: [Pt; 3]) -> Self {
        let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
        let mut grad = [[0.0; 2]; 3];
        let mut offset = [0.0; 3];
        for a in 0..3 {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            grad[a] = [(v[b][1] - v[c][1]) / det, (v[c][0] - v[b][0]) / det];
            offset[a] = (v[b][0] * v[c][1] - v[c][0] * v[b][1]) / det;
        }
        Shape {
            area: 0.5 * det.abs(),
            grad,
            offset,
        }
    }

    fn eval(&self, a: usize, x: Pt) -> f64 {
        self.offset[a] + self.grad[a][0] * x[0] + self.grad[a][1] * x[1]
    }

    fn stiffness(&self) -> [[f64; 3]; 3] {
        let mut k = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                k[a][b] = self.area * (self.grad[a][0] * self.grad[b][0] + self.grad[a][1] * self.grad[b][1]);
            }
        }
        k
    }
}

/// `∫_{T ∩ box} φ_a` for the three hats of triangle `T`, exact for the clipped polygon.
fn integrate_hats(shape: &Shape, tri: &[Pt; 3], lo: Pt, hi: Pt) -> [f64; 3] {
    let poly = clip_to_box(tri, lo, hi);
    let mut out = [0.0; 3];
    if poly.len() < 3 {
        return out;
    }
    for k in 1..poly.len() - 1 {
        let (p0, p1, p2) = (poly[0], poly[k], poly[k + 1]);
        let area = 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])).abs();
        for (a, o) in out.iter_mut().enumerate() {
            *o += area * (shape.eval(a, p0) + shape.eval(a, p1) + shape.eval(a, p2)) / 3.0;
        }
    }
    out
}

/// Sutherland-Hodgman clipping of a convex polygon to an axis-aligned box.
pub(crate) fn clip_to_box(poly: &[Pt], lo: Pt, hi: Pt) -> Vec<Pt> {
    let mut cur: Vec<Pt> = poly.to_vec();
    // (axis, bound, keep the side where coordinate >= bound)
    for (axis, bound, keep_above) in [(0, lo[0], true), (0, hi[0], false), (1, lo[1], true), (1, hi[1], false)] {
        if cur.is_empty() {
            break;
        }
        let inside = |p: &Pt| if keep_above { p[axis] >= bound } else { p[axis] <= bound };
        let mut next = Vec::with_capacity(cur.len() + 2);
        for k in 0..cur.len() {
            let a = cur[k];
            let b = cur[(k + 1) % cur.len()];
            let (ia, ib) = (inside(&a), inside(&b));
            if ia {
                next.push(a);
            }
            if ia != ib {
                let t = (bound - a[axis]) / (b[axis] - a[axis]);
                next.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lognormal_constants() {
        let (a, b) = Heat2dParams::default().lognormal_coefficients();
        assert!((a - (-0.043089)).abs() < 1e-6);
        assert!((b - 0.29356).abs() < 1e-5);
        assert!((exp(a) - 0.9578).abs() < 1e-4);
    }

    #[test]
    fn clipping_areas() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let shape = Shape::new(tri);
        // box fully containing the triangle: each hat integrates to area/3
        let full = integrate_hats(&shape, &tri, [-1.0, -1.0], [2.0, 2.0]);
        for v in full {
            assert!((v - 1.0 / 6.0).abs() < 1e-14);
        }
        // [0, 0.5]² ∩ T is the whole square (x + y <= 1 holds); area 0.25
        let part = integrate_hats(&shape, &tri, [0.0, 0.0], [0.5, 0.5]);
        assert!((part.iter().sum::<f64>() - 0.25).abs() < 1e-14);
        // φ_1 = x integrates to ∫∫ x = 0.5 * 0.25 * 0.5 = 1/16 over the square
        assert!((part[1] - 1.0 / 16.0).abs() < 1e-14);
        let none = integrate_hats(&shape, &tri, [0.8, 0.8], [0.9, 0.9]);
        assert_eq!(none, [0.0; 3]);
    }

    #[test]
    fn observation_weights_sum_to_one_and_load_to_total_source() {
        let p = Heat2dParams {
            subdivisions: 37,
            ..Default::default()
        };
        let field = EoleField::on_square(-0.5, 0.5, 11, 10, 0.2).unwrap();
        let prob = Heat2d::with_field(&p, &field).unwrap();
        // target and source lie away from the Dirichlet edges, so no mass is dropped
        assert!((prob.observe.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((prob.load.iter().sum::<f64>() - 2000.0 * 0.01).abs() < 1e-9);
        assert_eq!(prob.n_elements(), 2 * 37 * 37);
    }

    #[test]
    fn element_stiffness_annihilates_constants() {
        let shape = Shape::new([[0.0, 0.0], [0.3, 0.1], [0.1, 0.4]]);
        let k = shape.stiffness();
        for row in k {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
