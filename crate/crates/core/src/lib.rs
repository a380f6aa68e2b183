//! Surrogate-assisted adaptive importance sampling for small failure
//! probabilities.
//!
//! The crate estimates `P(g(U) <= 0)` for `U ~ N(0, I_d)` and an expensive
//! performance function `g`. A neural surrogate is refined along the sequence
//! of improved cross-entropy (ICE) proposals built from von Mises-Fisher-Nakagami
//! mixtures, using a greedy latent-space rule to decide which candidates get a
//! true-model evaluation.
//!
//! Everything here is pure computation over caller-supplied, seeded random
//! number generators. The crate is `no_std` (with `alloc`) when the default
//! `std` feature is disabled; IO, configuration and parallel experiment
//! orchestration live in the companion `pggr` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub mod ice;
pub mod linalg;
pub mod metrics;
pub mod points;
pub mod problems;
pub mod proposal;
pub mod selection;
pub mod special;
pub mod surrogate;

pub use error::{Error, Result};
pub use ice::{IceConfig, Method, RunResult, StageTrace};
pub use points::PointSet;
pub use problems::{PerformanceFunction, Problem, ProblemSpec};
pub use proposal::{MixtureParams, Proposal, VmfnmComponent};
pub use selection::SelectionConfig;
pub use surrogate::{Dataset, Surrogate};

/// Seeded generator used throughout the experiments.
pub type SeededRng = rand_chacha::ChaCha8Rng;
