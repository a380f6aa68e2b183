use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, PointSet, Result};

/// Where a labeled point came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    /// Added at refinement iteration `t` (1-based).
    Refinement(u32),
}

/// Labeled pairs `(u, g(u))` without duplicate inputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "RawDataset")]
pub struct Dataset {
    inputs: PointSet,
    labels: Vec<f64>,
    provenance: Vec<Provenance>,
    #[serde(skip)]
    seen: BTreeSet<Vec<u64>>,
}

#[derive(Deserialize)]
struct RawDataset {
    inputs: PointSet,
    labels: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl From<RawDataset> for Dataset {
    fn from(raw: RawDataset) -> Self {
        let seen = raw.inputs.rows().map(key).collect();
        Dataset {
            inputs: raw.inputs,
            labels: raw.labels,
            provenance: raw.provenance,
            seen,
        }
    }
}

fn key(u: &[f64]) -> Vec<u64> {
    // +0.0 folds -0.0 onto 0.0
    u.iter().map(|x| (x + 0.0).to_bits()).collect()
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Dataset {
            inputs: PointSet::new(dim),
            labels: Vec::new(),
            provenance: Vec::new(),
            seen: BTreeSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &PointSet {
        &self.inputs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        self.seen.contains(&key(u))
    }

    /// Adds a labeled point; an input already present is an error.
    pub fn push(&mut self, u: &[f64], label: f64, origin: Provenance) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::invalid("dataset point has the wrong dimension"));
        }
        if !label.is_finite() {
            return Err(Error::invalid("dataset labels must be finite"));
        }
        if !self.seen.insert(key(u)) {
            return Err(Error::invalid("duplicate input in dataset"));
        }
        self.inputs.push(u);
        self.labels.push(label);
        self.provenance.push(origin);
        Ok(())
    }

    pub fn count(&self, origin: Provenance) -> usize {
        self.provenance.iter().filter(|&&p| p == origin).count()
    }
}
