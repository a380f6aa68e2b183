//! Repeated independent runs, their summary statistics and parameter sweeps.

use std::time::Instant;

use pggr_core::ice::{
    pretrain, run_cmc_with, run_ice_true_with, run_surrogate_ice, Pretrained, Refinement, RunContext,
};
use pggr_core::metrics;
use pggr_core::{IceConfig, Method, Problem, ProblemSpec, RunResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exec::Rayon;

/// Version of every JSON and CSV layout written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Runs may fail individually; more than this fraction aborts the experiment.
const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Invalid(String),

    #[error("{failed} of {n_rep} runs failed (limit 20%); first failure: {first}")]
    TooManyFailures { failed: usize, n_rep: usize, first: String },

    #[error(transparent)]
    Core(#[from] pggr_core::Error),

    #[error("could not build the worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Everything that determines the numbers an experiment produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub problem: ProblemSpec,
    pub method: Method,
    pub ice: IceConfig,
    pub n_rep: usize,
    pub base_seed: u64,
    /// Reference failure probability for the relative error.
    pub reference: Option<f64>,
    /// Sample count of each crude Monte Carlo run.
    pub cmc_samples: u64,
}

impl RunSpec {
    pub fn new(problem: ProblemSpec, method: Method, n_rep: usize, base_seed: u64) -> Self {
        RunSpec {
            ice: IceConfig::for_problem(problem.name()),
            problem,
            method,
            n_rep,
            base_seed,
            reference: None,
            cmc_samples: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ice.validate()?;
        let min_rep = if self.method == Method::Cmc { 1 } else { 2 };
        if self.n_rep < min_rep {
            return Err(HarnessError::Invalid(format!(
                "n_rep must be at least {min_rep} for {}",
                self.method
            )));
        }
        if self.base_seed.checked_add(self.n_rep as u64).is_none() {
            return Err(HarnessError::Invalid("base_seed + n_rep overflows".into()));
        }
        if let Some(r) = self.reference {
            if !(r > 0.0) || !r.is_finite() {
                return Err(HarnessError::Invalid("reference must be positive and finite".into()));
            }
        }
        if self.method == Method::Cmc && self.cmc_samples == 0 {
            return Err(HarnessError::Invalid("cmc_samples must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn seed(&self, run: usize) -> u64 {
        self.base_seed + run as u64
    }
}

/// One run as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub index: usize,
    pub seed: u64,
    /// True-model evaluations of this run alone, the initial design included.
    pub single_run_cost: Option<u64>,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub spec: RunSpec,
    pub method: Method,
    pub problem: String,
    pub n_rep: usize,
    pub seeds: Vec<u64>,
    /// Estimates of the successful runs, in run order.
    pub estimates: Vec<f64>,
    pub mean_estimate: f64,
    /// Sample CoV of the estimates; the estimator's own CoV for a single crude Monte Carlo run.
    pub delta: Option<f64>,
    pub reference: Option<f64>,
    pub rel_error: Option<f64>,
    /// Reported cost: amortized for surrogate methods, the mean run cost otherwise.
    pub n_g: f64,
    pub mean_k_ad: f64,
    pub single_run_costs: Vec<u64>,
    /// Evaluations spent on the shared initial design.
    pub pretrain_evals: u64,
    pub stopped_runs: usize,
    pub failures: usize,
    pub failed_seeds: Vec<u64>,
}

/// Wall-clock measurements, kept apart from the reproducible summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub schema_version: u32,
    pub config_hash: String,
    pub pretrain_seconds: Option<f64>,
    pub run_seconds: Vec<f64>,
    pub total_seconds: f64,
    pub mean_run_seconds: f64,
    pub min_run_seconds: f64,
    pub max_run_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub summary: ExperimentSummary,
    pub runs: Vec<RunRecord>,
    pub timing: Timing,
}

/// Computes the summary statistics from stored run records.
pub fn summarize(spec: &RunSpec, runs: &[RunRecord]) -> Result<ExperimentSummary> {
    if runs.len() != spec.n_rep {
        return Err(HarnessError::Invalid(format!(
            "expected {} run records, got {}",
            spec.n_rep,
            runs.len()
        )));
    }
    let ok: Vec<&RunResult> = runs.iter().filter_map(|r| r.result.as_ref()).collect();
    let failed: Vec<&RunRecord> = runs.iter().filter(|r| r.result.is_none()).collect();
    if failed.len() as f64 > MAX_FAILURE_FRACTION * spec.n_rep as f64 || ok.is_empty() {
        return Err(HarnessError::TooManyFailures {
            failed: failed.len(),
            n_rep: spec.n_rep,
            first: failed
                .first()
                .and_then(|r| r.error.clone())
                .unwrap_or_else(|| "unknown".into()),
        });
    }
    let estimates: Vec<f64> = ok.iter().map(|r| r.estimate).collect();
    let mean_estimate = metrics::mean(&estimates)?;
    let delta = if estimates.len() >= 2 {
        metrics::coefficient_of_variation(&estimates).ok()
    } else {
        ok[0].estimator_cov
    };
    let rel_error = match spec.reference {
        Some(r) => Some(metrics::relative_error(mean_estimate, r)?),
        None => None,
    };
    let k_ad: Vec<usize> = ok.iter().map(|r| r.k_ad).collect();
    let costs: Vec<u64> = ok.iter().map(|r| r.g_evals).collect();
    let (n_g, pretrain_evals) = if spec.method.uses_surrogate() {
        let n_g = metrics::amortized_cost(spec.ice.m0, spec.n_rep, spec.ice.m_add, &k_ad)?;
        (n_g, spec.ice.m0 as u64)
    } else {
        let c: Vec<f64> = costs.iter().map(|&c| c as f64).collect();
        (metrics::mean(&c)?, 0)
    };
    let kf: Vec<f64> = k_ad.iter().map(|&k| k as f64).collect();
    Ok(ExperimentSummary {
        schema_version: SCHEMA_VERSION,
        config_hash: spec.hash(),
        spec: spec.clone(),
        method: spec.method,
        problem: spec.problem.name().to_string(),
        n_rep: spec.n_rep,
        seeds: runs.iter().map(|r| r.seed).collect(),
        estimates,
        mean_estimate,
        delta,
        reference: spec.reference,
        rel_error,
        n_g,
        mean_k_ad: metrics::mean(&kf)?,
        single_run_costs: costs,
        pretrain_evals,
        stopped_runs: ok.iter().filter(|r| r.stopped).count(),
        failures: failed.len(),
        failed_seeds: failed.iter().map(|r| r.seed).collect(),
    })
}

/// Parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    MAdd,
}

impl SweepParam {
    pub fn tag(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::MAdd => "m_add",
        }
    }

    /// Sets the swept value and pins the other parameter: `m_add = 70` while
    /// varying `β`, `β = 0.5` while varying `m_add`.
    pub fn apply(self, cfg: &mut IceConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::Beta => {
                cfg.beta = value;
                cfg.m_add = 70;
            }
            SweepParam::MAdd => {
                if !(value >= 1.0) || value.fract() != 0.0 || value > u32::MAX as f64 {
                    return Err(HarnessError::Invalid(format!("m_add must be a positive integer, got {value}")));
                }
                cfg.m_add = value as usize;
                cfg.beta = 0.5;
            }
        }
        Ok(())
    }
}

/// Worker pool plus the experiment drivers.
pub struct Harness {
    pool: rayon::ThreadPool,
}

impl Harness {
    /// `jobs = None` uses one worker per available core.
    pub fn new(jobs: Option<usize>) -> Result<Self> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(j) = jobs {
            if j == 0 {
                return Err(HarnessError::Invalid("jobs must be at least 1".into()));
            }
            builder = builder.num_threads(j);
        }
        Ok(Harness { pool: builder.build()? })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Initial design and surrogate shared by all runs of a spec, seeded with `base_seed`.
    pub fn pretrain(&self, spec: &RunSpec, problem: &Problem) -> Result<Pretrained> {
        spec.ice.validate()?;
        let local = problem.fork();
        Ok(self.pool.install(|| pretrain(&local, &spec.ice, spec.base_seed, &Rayon))?)
    }

    /// Builds the problem, pretrains if needed and runs every repetition.
    pub fn repeat_runs(&self, spec: &RunSpec) -> Result<Experiment> {
        spec.validate()?;
        let problem = spec.problem.build()?;
        self.repeat_runs_on(spec, &problem, None)
    }

    /// Like [`Harness::repeat_runs`] on an already built problem. Surrogate
    /// methods use `pretrained` when given, otherwise pretrain once here.
    pub fn repeat_runs_on(&self, spec: &RunSpec, problem: &Problem, pretrained: Option<&Pretrained>) -> Result<Experiment> {
        spec.validate()?;
        if problem.name() != spec.problem.name() {
            return Err(HarnessError::Invalid(format!(
                "problem '{}' does not match the spec's '{}'",
                problem.name(),
                spec.problem.name()
            )));
        }
        let start = Instant::now();
        let mut pretrain_seconds = None;
        let owned;
        let init = if spec.method.uses_surrogate() {
            match pretrained {
                Some(p) => Some(p),
                None => {
                    let t = Instant::now();
                    owned = self.pretrain(spec, problem)?;
                    pretrain_seconds = Some(t.elapsed().as_secs_f64());
                    Some(&owned)
                }
            }
        } else {
            None
        };
        let hash = spec.hash();
        let outcomes: Vec<(RunRecord, f64)> = self.pool.install(|| {
            (0..spec.n_rep)
                .into_par_iter()
                .map(|r| {
                    let seed = spec.seed(r);
                    let t = Instant::now();
                    let outcome = run_one(spec, problem, init, seed);
                    let secs = t.elapsed().as_secs_f64();
                    if let Err(e) = &outcome {
                        log::warn!("{} run {r} (seed {seed}) failed: {e}", spec.method);
                    }
                    let record = RunRecord {
                        schema_version: SCHEMA_VERSION,
                        config_hash: hash.clone(),
                        index: r,
                        seed,
                        single_run_cost: outcome.as_ref().ok().map(|res| res.g_evals),
                        error: outcome.as_ref().err().map(|e| e.to_string()),
                        result: outcome.ok(),
                    };
                    (record, secs)
                })
                .collect()
        });
        let (runs, run_seconds): (Vec<RunRecord>, Vec<f64>) = outcomes.into_iter().unzip();
        let summary = summarize(spec, &runs)?;
        let timing = Timing {
            schema_version: SCHEMA_VERSION,
            config_hash: hash,
            pretrain_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
            mean_run_seconds: run_seconds.iter().sum::<f64>() / run_seconds.len() as f64,
            min_run_seconds: run_seconds.iter().copied().fold(f64::INFINITY, f64::min),
            max_run_seconds: run_seconds.iter().copied().fold(0.0, f64::max),
            run_seconds,
        };
        Ok(Experiment { summary, runs, timing })
    }

    /// One experiment per value; everything else is held at `spec`. The
    /// initial surrogate does not depend on `β` or `m_add` and is trained once.
    pub fn sweep(&self, spec: &RunSpec, param: SweepParam, values: &[f64]) -> Result<Vec<Experiment>> {
        if values.is_empty() {
            return Err(HarnessError::Invalid("a sweep needs at least one value".into()));
        }
        let specs = values
            .iter()
            .map(|&v| {
                let mut s = spec.clone();
                param.apply(&mut s.ice, v)?;
                s.validate()?;
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        let problem = spec.problem.build()?;
        let init = if spec.method.uses_surrogate() {
            Some(self.pretrain(&specs[0], &problem)?)
        } else {
            None
        };
        specs
            .iter()
            .map(|s| self.repeat_runs_on(s, &problem, init.as_ref()))
            .collect()
    }
}

fn run_one(spec: &RunSpec, problem: &Problem, init: Option<&Pretrained>, seed: u64) -> pggr_core::Result<RunResult> {
    let local = problem.fork();
    let mut ctx = RunContext::with_exec(&Rayon);
    let result = match spec.method {
        Method::Pggr | Method::Random => {
            let refinement = if spec.method == Method::Pggr {
                Refinement::Greedy
            } else {
                Refinement::Random
            };
            let init = init.expect("surrogate methods are pretrained");
            run_surrogate_ice(&local, &spec.ice, refinement, init, seed, &mut ctx)?
        }
        Method::IceTrue => run_ice_true_with(&local, &spec.ice, seed, &mut ctx)?,
        Method::Cmc => run_cmc_with(&local, spec.cmc_samples, seed, &Rayon)?,
    };
    let charged = if spec.method.uses_surrogate() {
        local.eval_count() + init.map_or(0, |p| p.data.len() as u64)
    } else {
        local.eval_count()
    };
    debug_assert_eq!(charged, result.g_evals, "evaluation count disagrees with the run's own accounting");
    Ok(result)
}

/// Runs `n_rep` repetitions of `method` with the problem's default settings
/// replaced by `cfg`, on one worker per core.
pub fn repeat_runs(method: Method, problem: ProblemSpec, cfg: IceConfig, n_rep: usize, base_seed: u64) -> Result<Experiment> {
    let mut spec = RunSpec::new(problem, method, n_rep, base_seed);
    spec.ice = cfg;
    Harness::new(None)?.repeat_runs(&spec)
}
