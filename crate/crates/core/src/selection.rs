//! Greedy latent-space selection of the candidates that receive a true-model
//! evaluation.
//!
//! At every step the remaining candidates are scored by
//! `S = -norm(|ĝ|) + β · norm(dist)`, where `dist` is the latent distance to
//! the reference set grown by everything selected so far and both terms are
//! min-max normalized over the remaining candidates.

use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::surrogate::Surrogate;
use crate::{Error, PointSet, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Diversity weight.
    pub beta: f64,
    /// Points added per refinement iteration.
    pub m_add: usize,
    /// Candidate pool size.
    pub n_candidates: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            beta: 0.5,
            m_add: 70,
            n_candidates: 10_000,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || self.m_add == 0 || self.m_add > self.n_candidates {
            return Err(Error::invalid("selection needs beta >= 0 and 1 <= m_add <= n_candidates"));
        }
        Ok(())
    }
}

/// A feature map into the latent space.
pub trait LatentMap {
    fn encode(&self, points: &PointSet) -> PointSet;
}

impl LatentMap for Surrogate {
    fn encode(&self, points: &PointSet) -> PointSet {
        Surrogate::encode(self, points)
    }
}

/// The identity map, mostly for tests and for selection in input space.
#[derive(Clone, Copy, Debug, Default)]
pub struct InputSpace;

impl LatentMap for InputSpace {
    fn encode(&self, points: &PointSet) -> PointSet {
        points.clone()
    }
}

#[inline]
fn distance(a: &[f64], b: &[f64]) -> f64 {
    sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn nearest(codes: &PointSet, refs: &PointSet) -> Vec<f64> {
    codes
        .rows()
        .map(|z| refs.rows().map(|r| distance(z, r)).fold(f64::INFINITY, f64::min))
        .collect()
}

/// Distance from each candidate's latent code to the nearest reference code.
pub fn latent_distances(candidates: &PointSet, refset: &PointSet, map: &impl LatentMap) -> Result<Vec<f64>> {
    if refset.is_empty() {
        return Err(Error::invalid("latent distances need a nonempty reference set"));
    }
    Ok(nearest(&map.encode(candidates), &map.encode(refset)))
}

/// One greedy step, for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub index: usize,
    pub score: f64,
    pub abs_g: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected pool indices in selection order.
    pub indices: Vec<usize>,
    pub trace: Vec<SelectionStep>,
    /// Candidates dropped because their input already exists in the reference set.
    pub duplicates: usize,
}

/// Greedy selection of `cfg.m_add` pool indices; ties go to the lowest index.
pub fn greedy_select(
    pool: &PointSet,
    g_hat: &[f64],
    refset: &PointSet,
    map: &impl LatentMap,
    cfg: &SelectionConfig,
) -> Result<Selection> {
    let n = pool.len();
    if g_hat.len() != n {
        return Err(Error::invalid("one surrogate value per candidate is required"));
    }
    if refset.is_empty() {
        return Err(Error::invalid("greedy selection needs a nonempty reference set"));
    }
    if !(cfg.beta >= 0.0) {
        return Err(Error::invalid("beta must be nonnegative"));
    }
    let codes = map.encode(pool);
    let ref_codes = map.encode(refset);
    let mut dist = nearest(&codes, &ref_codes);
    let abs_g: Vec<f64> = g_hat.iter().map(|g| g.abs()).collect();
    let mut active = vec![true; n];
    let mut duplicates = 0;
    for i in 0..n {
        // an exact input duplicate has latent distance zero to itself
        if dist[i] == 0.0 && refset.rows().any(|r| r == pool.row(i)) {
            active[i] = false;
            duplicates += 1;
        }
    }
    let available = active.iter().filter(|&&a| a).count();
    if available < cfg.m_add {
        return Err(Error::invalid("fewer distinct candidates than points to add"));
    }

    let mut out = Selection {
        indices: Vec::with_capacity(cfg.m_add),
        trace: Vec::with_capacity(cfg.m_add),
        duplicates,
    };
    for _ in 0..cfg.m_add {
        let (g_lo, g_hi) = min_max(&abs_g, &active);
        let (d_lo, d_hi) = min_max(&dist, &active);
        let g_span = g_hi - g_lo;
        let d_span = d_hi - d_lo;
        if !(g_span > 0.0) || !(d_span > 0.0) {
            log::debug!("degenerate score normalization (|ĝ| span {g_span:e}, distance span {d_span:e})");
        }
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            let ng = if g_span > 0.0 { (abs_g[i] - g_lo) / g_span } else { 0.0 };
            let nd = if d_span > 0.0 && dist[i].is_finite() { (dist[i] - d_lo) / d_span } else { 0.0 };
            let score = -ng + cfg.beta * nd;
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        let (pick, score) = best.expect("at least one active candidate");
        out.indices.push(pick);
        out.trace.push(SelectionStep {
            index: pick,
            score,
            abs_g: abs_g[pick],
            distance: dist[pick],
        });
        active[pick] = false;
        let z_pick = codes.row(pick);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let d = distance(codes.row(i), z_pick);
            if d < dist[i] {
                dist[i] = d;
            }
            if d == 0.0 && pool.row(i) == pool.row(pick) {
                active[i] = false;
            }
        }
        if out.indices.len() < cfg.m_add && !active.iter().any(|&a| a) {
            return Err(Error::invalid("candidate pool exhausted by duplicates"));
        }
    }
    Ok(out)
}

fn min_max(values: &[f64], active: &[bool]) -> (f64, f64) {
    values
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_distances() {
        let refs = PointSet::from_rows(2, &[[0.0, 0.0]]);
        let cands = PointSet::from_rows(2, &[[3.0, 4.0], [0.0, 0.0]]);
        assert_eq!(latent_distances(&cands, &refs, &InputSpace).unwrap(), vec![5.0, 0.0]);
        assert!(latent_distances(&cands, &PointSet::new(2), &InputSpace).is_err());
    }

    #[test]
    fn duplicates_of_the_reference_set_are_skipped() {
        let refs = PointSet::from_rows(1, &[[0.0]]);
        let pool = PointSet::from_rows(1, &[[0.0], [1.0], [2.0]]);
        let cfg = SelectionConfig {
            beta: 0.0,
            m_add: 2,
            n_candidates: 3,
        };
        let sel = greedy_select(&pool, &[0.0, 0.5, 0.7], &refs, &InputSpace, &cfg).unwrap();
        assert_eq!(sel.indices, vec![1, 2]);
        assert_eq!(sel.duplicates, 1);
    }

    #[test]
    fn repeated_pool_points_are_picked_once() {
        let refs = PointSet::from_rows(1, &[[10.0]]);
        let pool = PointSet::from_rows(1, &[[1.0], [1.0], [2.0]]);
        let cfg = SelectionConfig {
            beta: 0.0,
            m_add: 2,
            n_candidates: 3,
        };
        let sel = greedy_select(&pool, &[0.1, 0.1, 0.5], &refs, &InputSpace, &cfg).unwrap();
        assert_eq!(sel.indices, vec![0, 2]);
    }
}
