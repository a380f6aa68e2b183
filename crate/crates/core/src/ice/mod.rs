//! Improved cross-entropy (ICE) importance sampling with vMFNM proposals,
//! driven either by the true performance function or by a surrogate refined
//! along the proposal sequence.

mod run;
mod weights;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::proposal::{EmOptions, Proposal};
use crate::selection::SelectionConfig;
use crate::surrogate::{Architecture, Surrogate, TrainOptions};
use crate::{Error, Result};

pub use run::{
    ce_update, pretrain, run_cmc, run_cmc_with, run_ice_true, run_ice_true_with, run_pggr, run_random_refine,
    run_surrogate_ice, Executor, Pretrained, Refinement, RefinableModel, RunContext, Sequential, StageView,
};
pub use weights::{cov_of_weights, select_sigma, soft_indicator, stopping_diagnostic, weight_cov};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IceConfig {
    pub delta_target: f64,
    pub delta_stop: f64,
    pub t_max: usize,
    /// Initial smoothing bound; `None` uses `max(1, 99th percentile of |ĝ_0|)` over `C_0`.
    pub sigma0: Option<f64>,
    pub eps_h: f64,
    /// Candidate pool size `N_c`, also the true-model ICE sample size per stage.
    pub n_candidates: usize,
    /// Initial training set size `M_0`.
    pub m0: usize,
    pub n_pretrain: usize,
    pub n_finetune: usize,
    pub m_add: usize,
    pub beta: f64,
    /// Mixture components `K`.
    pub components: usize,
    /// Final-stage sample count `N`.
    pub n_final: usize,
    pub em_restarts: usize,
    pub em_max_iter: usize,
    pub learning_rate: f64,
    pub freeze_last_encoder: bool,
    /// `None` uses the standard `[d, 40, 10] + [10, 20, 20, 1]` network.
    pub architecture: Option<Architecture>,
}

impl Default for IceConfig {
    fn default() -> Self {
        IceConfig {
            delta_target: 2.0,
            delta_stop: 2.0,
            t_max: 20,
            sigma0: None,
            eps_h: 1e-10,
            n_candidates: 10_000,
            m0: 512,
            n_pretrain: 40_000,
            n_finetune: 500,
            m_add: 70,
            beta: 0.5,
            components: 1,
            n_final: 10_000,
            em_restarts: 1,
            em_max_iter: 200,
            learning_rate: 1e-3,
            freeze_last_encoder: true,
            architecture: None,
        }
    }
}

impl IceConfig {
    /// Settings of the two-dimensional four-mode experiment.
    pub fn four_mode() -> Self {
        IceConfig {
            m0: 32,
            m_add: 30,
            n_candidates: 3000,
            beta: 1.0,
            components: 4,
            em_restarts: 10,
            n_finetune: 2000,
            architecture: Some(Architecture::four_mode()),
            ..IceConfig::default()
        }
    }

    /// Defaults for a named problem.
    pub fn for_problem(name: &str) -> Self {
        match name {
            "four_mode" => IceConfig::four_mode(),
            _ => IceConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::invalid(alloc::format!("config: {msg}")));
        if !(self.delta_target > 0.0) || !(self.delta_stop > 0.0) {
            return fail("delta_target and delta_stop must be positive");
        }
        if self.t_max == 0 {
            return fail("t_max must be at least 1");
        }
        if !(self.eps_h > 0.0) {
            return fail("eps_h must be positive");
        }
        if let Some(s) = self.sigma0 {
            if !(s > 0.0) || !s.is_finite() {
                return fail("sigma0 must be positive and finite");
            }
        }
        if self.components == 0 || self.n_candidates < 10 * self.components {
            return fail("n_candidates must be at least 10 per mixture component");
        }
        if self.m_add == 0 || self.m_add > self.n_candidates {
            return fail("m_add must lie in 1..=n_candidates");
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return fail("beta must be nonnegative");
        }
        if self.m0 < 2 {
            return fail("m0 must be at least 2");
        }
        if self.n_final == 0 {
            return fail("n_final must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if let Some(a) = &self.architecture {
            a.validate()?;
        }
        Ok(())
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            beta: self.beta,
            m_add: self.m_add,
            n_candidates: self.n_candidates,
        }
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            max_iter: self.em_max_iter,
            restarts: self.em_restarts,
            ..EmOptions::default()
        }
    }

    pub fn architecture_for(&self, dim: usize) -> Architecture {
        self.architecture.clone().unwrap_or_else(|| Architecture::standard(dim))
    }

    pub fn train_options(&self, iters: usize, freeze: bool) -> TrainOptions {
        TrainOptions {
            iters,
            learning_rate: self.learning_rate,
            freeze_last_encoder: freeze,
            ..TrainOptions::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cmc,
    IceTrue,
    Pggr,
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cmc, Method::IceTrue, Method::Pggr, Method::Random];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Cmc => "cmc",
            Method::IceTrue => "ice_true",
            Method::Pggr => "pggr",
            Method::Random => "random",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.tag() == tag)
    }

    /// Whether the method uses a pretrained surrogate.
    pub fn uses_surrogate(self) -> bool {
        matches!(self, Method::Pggr | Method::Random)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Diagnostics of one adaptive stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    /// Stage index; `0` is the initial fit on the nominal pool.
    pub t: usize,
    /// `σ_{t+1}` chosen on this stage's pool.
    pub sigma: f64,
    /// Stopping diagnostic; `None` when no candidate is predicted to fail.
    pub delta_star: Option<f64>,
    /// CoV of the ICE weights at the chosen `σ`.
    pub weight_cov: Option<f64>,
    pub predicted_failures: usize,
    /// Effective sample size of the normalized ICE weights, absent when the stage stopped.
    pub ess: Option<f64>,
    /// Pool indices evaluated with the true model at this stage.
    pub selected: Vec<usize>,
    /// True-model evaluations so far, including the initial design.
    pub g_evals: u64,
    /// Surrogate misfit after refinement, in scaled units.
    pub train_mse: Option<f64>,
}

/// Outcome of one independent run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub problem: String,
    pub seed: u64,
    pub estimate: f64,
    /// Adaptive iterations used.
    pub k_ad: usize,
    /// True-model evaluations charged to this run, unamortized.
    pub g_evals: u64,
    /// Whether the stopping criterion fired before the iteration budget ran out.
    pub stopped: bool,
    /// `σ_0, σ_1, …`.
    pub sigmas: Vec<f64>,
    pub stages: Vec<StageTrace>,
    pub proposal: Proposal,
    pub surrogate: Option<Surrogate>,
    pub n_final: u64,
    /// Estimated CoV of the estimate from its own sample.
    pub estimator_cov: Option<f64>,
    /// Mean of `p/q_f` over the final sample.
    pub final_lr_mean: Option<f64>,
}

impl RunResult {
    /// Stopping diagnostics of every stage, `None` where no failure was predicted.
    pub fn deltas(&self) -> Vec<Option<f64>> {
        self.stages.iter().map(|s| s.delta_star).collect()
    }
}
