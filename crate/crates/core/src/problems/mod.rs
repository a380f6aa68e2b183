//! Benchmark performance functions.
//!
//! Every call to [`Problem::eval`] is one high-fidelity evaluation and is
//! tallied by an atomic counter, so a problem can be shared across threads.

mod diffusion;
mod eole;
mod four_mode;
mod heat2d;
mod kl;
mod semilinear_heat;

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use diffusion::{Diffusion1d, DiffusionParams};
pub use eole::EoleField;
pub use four_mode::{four_mode_g, FourMode};
pub use heat2d::{Heat2d, Heat2dParams};
pub use kl::{Kl1dField, ModeBasis};
pub use semilinear_heat::{SemilinearHeat, SemilinearHeatParams};

/// A scalar limit-state function; failure is `g(u) <= 0`.
pub trait PerformanceFunction: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, u: &[f64]) -> Result<f64>;
}

struct FnPerformance<F> {
    dim: usize,
    f: F,
}

impl<F> PerformanceFunction for FnPerformance<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, u: &[f64]) -> Result<f64> {
        Ok((self.f)(u))
    }
}

/// A named performance function with an evaluation tally.
pub struct Problem {
    name: String,
    func: Arc<dyn PerformanceFunction>,
    evals: AtomicU64,
}

impl Problem {
    pub fn new(name: impl Into<String>, func: impl PerformanceFunction + 'static) -> Self {
        Problem {
            name: name.into(),
            func: Arc::new(func),
            evals: AtomicU64::new(0),
        }
    }

    /// Wraps a plain closure, mostly useful for synthetic test problems.
    pub fn from_fn<F>(name: impl Into<String>, dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Problem::new(name, FnPerformance { dim, f })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.func.dim()
    }

    /// One true-model evaluation.
    pub fn eval(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim() {
            return Err(Error::invalid("input dimension does not match the problem"));
        }
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.func.evaluate(u)
    }

    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    /// Same function, fresh counter. Discretization data is shared, not rebuilt.
    pub fn fork(&self) -> Problem {
        Problem {
            name: self.name.clone(),
            func: Arc::clone(&self.func),
            evals: AtomicU64::new(0),
        }
    }
}

impl core::fmt::Debug for Problem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("evals", &self.eval_count())
            .finish()
    }
}

/// Problem selection by name plus parameter overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum ProblemSpec {
    #[serde(rename = "four_mode")]
    FourMode,
    #[serde(rename = "diffusion1d")]
    Diffusion1d(DiffusionParams),
    #[serde(rename = "semilinear_heat")]
    SemilinearHeat(SemilinearHeatParams),
    #[serde(rename = "heat2d")]
    Heat2d(Heat2dParams),
}

impl ProblemSpec {
    pub const NAMES: [&'static str; 4] = ["four_mode", "diffusion1d", "semilinear_heat", "heat2d"];

    /// Default parameters for a named problem.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "four_mode" => Ok(ProblemSpec::FourMode),
            "diffusion1d" => Ok(ProblemSpec::Diffusion1d(DiffusionParams::default())),
            "semilinear_heat" => Ok(ProblemSpec::SemilinearHeat(SemilinearHeatParams::default())),
            "heat2d" => Ok(ProblemSpec::Heat2d(Heat2dParams::default())),
            other => Err(Error::invalid(alloc::format!(
                "unknown problem '{other}', expected one of {:?}",
                Self::NAMES
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::FourMode => "four_mode",
            ProblemSpec::Diffusion1d(_) => "diffusion1d",
            ProblemSpec::SemilinearHeat(_) => "semilinear_heat",
            ProblemSpec::Heat2d(_) => "heat2d",
        }
    }

    /// Builds the discretization (eigenpairs, meshes) and wraps it as a [`Problem`].
    pub fn build(&self) -> Result<Problem> {
        let name = self.name().to_string();
        let func: Box<dyn PerformanceFunction> = match self {
            ProblemSpec::FourMode => Box::new(FourMode),
            ProblemSpec::Diffusion1d(p) => Box::new(Diffusion1d::new(p)?),
            ProblemSpec::SemilinearHeat(p) => Box::new(SemilinearHeat::new(p)?),
            ProblemSpec::Heat2d(p) => Box::new(Heat2d::new(p)?),
        };
        Ok(Problem {
            name,
            func: Arc::from(func),
            evals: AtomicU64::new(0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_tracks_calls_and_fork_resets() {
        let p = Problem::from_fn("lin", 2, |u| u[0] + u[1]);
        for _ in 0..7 {
            p.eval(&[1.0, 2.0]).unwrap();
        }
        assert_eq!(p.eval_count(), 7);
        let q = p.fork();
        assert_eq!(q.eval_count(), 0);
        assert_eq!(q.eval(&[1.0, -1.0]).unwrap(), 0.0);
        assert_eq!(p.eval_count(), 7);
    }

    #[test]
    fn wrong_dimension_is_rejected_without_counting() {
        let p = Problem::from_fn("lin", 2, |u| u[0]);
        assert!(p.eval(&[1.0]).is_err());
        assert_eq!(p.eval_count(), 0);
    }

    #[test]
    fn names_round_trip() {
        for name in ProblemSpec::NAMES {
            assert_eq!(ProblemSpec::from_name(name).unwrap().name(), name);
        }
        assert!(ProblemSpec::from_name("nope").is_err());
    }
}
