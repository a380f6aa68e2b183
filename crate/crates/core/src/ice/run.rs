use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, sqrt};
use rand::seq::index;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::weights::{select_sigma, soft_indicator, stopping_diagnostic, weight_cov};
use super::{IceConfig, Method, RunResult, StageTrace};
use crate::problems::Problem;
use crate::proposal::{fit_weighted, EmOptions, MixtureParams, Proposal};
use crate::selection::{greedy_select, LatentMap};
use crate::special::log_normal_cdf;
use crate::surrogate::{Dataset, Provenance, Surrogate};
use crate::{Error, PointSet, Result, SeededRng};

const STREAM_PRETRAIN: u64 = 0;
const STREAM_ADAPT: u64 = 1;
const STREAM_FINAL: u64 = 2;
const STREAM_CMC: u64 = 1 << 32;
const CMC_CHUNK: u64 = 1 << 20;

fn stream(seed: u64, id: u64) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Runs independent index-addressed jobs and returns their results in index order.
pub trait Executor: Sync {
    fn map(&self, n: usize, f: &(dyn Fn(usize) -> Result<f64> + Sync)) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map(&self, n: usize, f: &(dyn Fn(usize) -> Result<f64> + Sync)) -> Result<Vec<f64>> {
        (0..n).map(f).collect()
    }
}

/// What one stage exposes to an observer.
#[derive(Debug)]
pub struct StageView<'a> {
    pub t: usize,
    pub pool: &'a PointSet,
    /// Values driving the proposal update: `ĝ_t` or, for true-model ICE, `g`.
    pub values: &'a [f64],
    pub log_lr: &'a [f64],
    pub sigma_prev: f64,
    pub sigma: f64,
    /// `+∞` when no candidate is predicted to fail.
    pub delta_star: f64,
    pub selected: &'a [usize],
    pub labels: &'a [f64],
}

pub struct RunContext<'a> {
    pub exec: &'a dyn Executor,
    pub observer: Option<&'a mut dyn FnMut(&StageView<'_>)>,
}

impl RunContext<'static> {
    pub fn sequential() -> Self {
        RunContext {
            exec: &Sequential,
            observer: None,
        }
    }
}

impl<'a> RunContext<'a> {
    pub fn with_exec(exec: &'a dyn Executor) -> Self {
        RunContext { exec, observer: None }
    }

    fn notify(&mut self, view: &StageView<'_>) {
        if let Some(obs) = self.observer.as_mut() {
            obs(view);
        }
    }
}

/// A predictor that can be refined on a growing dataset.
pub trait RefinableModel: LatentMap + Clone {
    fn predict(&self, points: &PointSet) -> Vec<f64>;

    /// Updates the model after enrichment and returns the training misfit if tracked.
    fn refine(&mut self, data: &Dataset, cfg: &IceConfig) -> Result<Option<f64>>;

    fn as_surrogate(&self) -> Option<&Surrogate> {
        None
    }
}

impl RefinableModel for Surrogate {
    fn predict(&self, points: &PointSet) -> Vec<f64> {
        Surrogate::predict(self, points)
    }

    fn refine(&mut self, data: &Dataset, cfg: &IceConfig) -> Result<Option<f64>> {
        let report = self.train(data, &cfg.train_options(cfg.n_finetune, cfg.freeze_last_encoder))?;
        Ok(Some(report.final_mse))
    }

    fn as_surrogate(&self) -> Option<&Surrogate> {
        Some(self)
    }
}

/// Initial design and the surrogate trained on it, shared by repeated runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Pretrained<M = Surrogate> {
    pub model: M,
    pub data: Dataset,
    pub seed: u64,
}

/// Draws `M_0` nominal samples, evaluates them and trains the initial surrogate.
pub fn pretrain(problem: &Problem, cfg: &IceConfig, seed: u64, exec: &dyn Executor) -> Result<Pretrained> {
    cfg.validate()?;
    let dim = problem.dim();
    let arch = cfg.architecture_for(dim);
    if arch.input_dim() != dim {
        return Err(Error::invalid("surrogate input width does not match the problem dimension"));
    }
    let mut rng = stream(seed, STREAM_PRETRAIN);
    let inputs = Proposal::Nominal { dim }.sample(cfg.m0, &mut rng);
    let labels = exec
        .map(cfg.m0, &|i| problem.eval(inputs.row(i)))
        .map_err(|e| e.at_stage("pretraining: initial design"))?;
    let mut data = Dataset::new(dim);
    for (u, &y) in inputs.rows().zip(&labels) {
        data.push(u, y, Provenance::Initial)?;
    }
    let mut model = Surrogate::new(arch, &mut rng)?;
    model
        .train(&data, &cfg.train_options(cfg.n_pretrain, false))
        .map_err(|e| e.at_stage("pretraining"))?;
    Ok(Pretrained { model, data, seed })
}

/// How the refinement points are picked from each candidate pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refinement {
    Greedy,
    Random,
}

impl Refinement {
    fn method(self) -> Method {
        match self {
            Refinement::Greedy => Method::Pggr,
            Refinement::Random => Method::Random,
        }
    }
}

fn log_ratios(q: &Proposal, pool: &PointSet) -> Result<Vec<f64>> {
    pool.rows().map(|u| q.log_likelihood_ratio(u)).collect()
}

fn sigma0_rule(values: &[f64]) -> f64 {
    let mut a: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    a.sort_by(f64::total_cmp);
    let idx = (libm::ceil(0.99 * a.len() as f64) as usize).max(1) - 1;
    a[idx].max(1.0)
}

struct Assessment {
    sigma: f64,
    delta_star: f64,
    weight_cov: Option<f64>,
    predicted_failures: usize,
}

fn assess(values: &[f64], log_lr: &[f64], sigma_prev: f64, cfg: &IceConfig) -> Result<Assessment> {
    let sigma = select_sigma(values, log_lr, sigma_prev, cfg.delta_target)?;
    let h = soft_indicator(values, sigma);
    Ok(Assessment {
        sigma,
        delta_star: stopping_diagnostic(values, &h, cfg.eps_h),
        weight_cov: weight_cov(values, log_lr, sigma),
        predicted_failures: values.iter().filter(|&&v| v <= 0.0).count(),
    })
}

/// Weighted EM fit of the next proposal to `Φ(-v/σ) · p/q_t` on the pool.
/// Returns the mixture and the effective sample size of the weights.
fn ce_fit(
    pool: &PointSet,
    values: &[f64],
    log_lr: &[f64],
    sigma: f64,
    k: usize,
    opts: &EmOptions,
    rng: &mut SeededRng,
) -> Result<(MixtureParams, f64)> {
    let logs: Vec<f64> = values
        .iter()
        .zip(log_lr)
        .map(|(v, l)| log_normal_cdf(-v / sigma) + l)
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::SigmaCollapse);
    }
    let w: Vec<f64> = logs.iter().map(|l| exp(l - top)).collect();
    let sum: f64 = w.iter().sum();
    let ess = sum * sum / w.iter().map(|x| x * x).sum::<f64>();
    if ess < 5.0 * k as f64 {
        log::warn!("CE update with effective sample size {ess:.1} for {k} components");
    }
    let fit = fit_weighted(pool, &w, k, opts, rng)?;
    Ok((fit.params, ess))
}

/// One cross-entropy update: fit a `k`-component vMFNM mixture to the soft
/// target `Φ(-ĝ/σ) p` using a pool drawn from `q_t`.
pub fn ce_update(
    pool: &PointSet,
    g_hat: &[f64],
    q_t: &Proposal,
    sigma: f64,
    k: usize,
    opts: &EmOptions,
    rng: &mut SeededRng,
) -> Result<MixtureParams> {
    if g_hat.len() != pool.len() {
        return Err(Error::invalid("one surrogate value per pool point is required"));
    }
    let log_lr = log_ratios(q_t, pool)?;
    Ok(ce_fit(pool, g_hat, &log_lr, sigma, k, opts, rng)?.0)
}

struct Estimate {
    value: f64,
    cov: Option<f64>,
    lr_mean: f64,
}

fn is_estimate(fails: impl Iterator<Item = bool>, log_lr: &[f64]) -> Estimate {
    let n = log_lr.len() as f64;
    let lr: Vec<f64> = log_lr.iter().map(|l| exp(*l)).collect();
    let terms: Vec<f64> = fails.zip(&lr).map(|(f, r)| if f { *r } else { 0.0 }).collect();
    let value = terms.iter().sum::<f64>() / n;
    let cov = (value > 0.0 && n > 1.0).then(|| {
        let var = terms.iter().map(|x| (x - value) * (x - value)).sum::<f64>() / (n - 1.0);
        sqrt(var / n) / value
    });
    Estimate {
        value,
        cov,
        lr_mean: lr.iter().sum::<f64>() / n,
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Pretrains a surrogate and runs the greedy surrogate-refined ICE, all on one thread.
pub fn run_pggr(problem: &Problem, cfg: &IceConfig, seed: u64) -> Result<RunResult> {
    let init = pretrain(problem, cfg, seed, &Sequential)?;
    run_surrogate_ice(problem, cfg, Refinement::Greedy, &init, seed, &mut RunContext::sequential())
}

/// As [`run_pggr`] with refinement points drawn uniformly from each pool.
pub fn run_random_refine(problem: &Problem, cfg: &IceConfig, seed: u64) -> Result<RunResult> {
    let init = pretrain(problem, cfg, seed, &Sequential)?;
    run_surrogate_ice(problem, cfg, Refinement::Random, &init, seed, &mut RunContext::sequential())
}

/// The adaptive stage with a surrogate refined along the proposal sequence,
/// followed by the surrogate-based final estimate.
///
/// The initial design is charged to the run, so `g_evals = M_0 + m_add · K_ad`.
pub fn run_surrogate_ice<M: RefinableModel>(
    problem: &Problem,
    cfg: &IceConfig,
    refinement: Refinement,
    init: &Pretrained<M>,
    seed: u64,
    ctx: &mut RunContext<'_>,
) -> Result<RunResult> {
    cfg.validate()?;
    let dim = problem.dim();
    if init.data.dim() != dim {
        return Err(Error::invalid("pretrained dataset dimension does not match the problem"));
    }
    if init.data.len() != cfg.m0 {
        return Err(Error::invalid(format!(
            "pretrained design has {} points but m0 = {}",
            init.data.len(),
            cfg.m0
        )));
    }
    let mut rng = stream(seed, STREAM_ADAPT);
    let mut data = init.data.clone();
    let mut model = init.model.clone();
    let mut g_evals = cfg.m0 as u64;
    let em = cfg.em_options();
    let sel = cfg.selection();

    let mut q = Proposal::Nominal { dim };
    let pool = q.sample(cfg.n_candidates, &mut rng);
    let log_lr = vec![0.0; cfg.n_candidates];
    let values = model.predict(&pool);
    let sigma0 = cfg.sigma0.unwrap_or_else(|| sigma0_rule(&values));
    let a = assess(&values, &log_lr, sigma0, cfg).map_err(|e| e.at_stage("stage 0: smoothing selection"))?;
    let (params, ess) = ce_fit(&pool, &values, &log_lr, a.sigma, cfg.components, &em, &mut rng)
        .map_err(|e| e.at_stage("stage 0: proposal update"))?;
    ctx.notify(&StageView {
        t: 0,
        pool: &pool,
        values: &values,
        log_lr: &log_lr,
        sigma_prev: sigma0,
        sigma: a.sigma,
        delta_star: a.delta_star,
        selected: &[],
        labels: &[],
    });
    let mut sigmas = vec![sigma0, a.sigma];
    let mut stages = vec![StageTrace {
        t: 0,
        sigma: a.sigma,
        delta_star: finite(a.delta_star),
        weight_cov: a.weight_cov,
        predicted_failures: a.predicted_failures,
        ess: Some(ess),
        selected: Vec::new(),
        g_evals,
        train_mse: None,
    }];
    q = Proposal::Mixture(params);

    let mut stopped = false;
    let mut k_ad = cfg.t_max;
    for t in 1..=cfg.t_max {
        let stage = |what: &str| format!("stage {t}: {what}");
        let pool = q.sample(cfg.n_candidates, &mut rng);
        let log_lr = log_ratios(&q, &pool)?;
        let selected = match refinement {
            Refinement::Greedy => {
                let prior = model.predict(&pool);
                greedy_select(&pool, &prior, data.inputs(), &model, &sel)
                    .map_err(|e| e.at_stage(stage("greedy selection")))?
                    .indices
            }
            Refinement::Random => index::sample(&mut rng, cfg.n_candidates, cfg.m_add).into_vec(),
        };
        let picked = pool.select(&selected);
        let labels = ctx
            .exec
            .map(picked.len(), &|i| problem.eval(picked.row(i)))
            .map_err(|e| e.at_stage(stage("true-model evaluation")))?;
        for (u, &y) in picked.rows().zip(&labels) {
            data.push(u, y, Provenance::Refinement(t as u32))
                .map_err(|e| e.at_stage(stage("dataset update")))?;
        }
        g_evals += picked.len() as u64;
        let train_mse = model.refine(&data, cfg).map_err(|e| e.at_stage(stage("surrogate refinement")))?;
        let values = model.predict(&pool);
        let sigma_prev = *sigmas.last().expect("nonempty");
        let a = assess(&values, &log_lr, sigma_prev, cfg).map_err(|e| e.at_stage(stage("smoothing selection")))?;
        sigmas.push(a.sigma);
        ctx.notify(&StageView {
            t,
            pool: &pool,
            values: &values,
            log_lr: &log_lr,
            sigma_prev,
            sigma: a.sigma,
            delta_star: a.delta_star,
            selected: &selected,
            labels: &labels,
        });
        let mut trace = StageTrace {
            t,
            sigma: a.sigma,
            delta_star: finite(a.delta_star),
            weight_cov: a.weight_cov,
            predicted_failures: a.predicted_failures,
            ess: None,
            selected,
            g_evals,
            train_mse,
        };
        if a.delta_star <= cfg.delta_stop {
            stages.push(trace);
            stopped = true;
            k_ad = t;
            break;
        }
        let (params, ess) = ce_fit(&pool, &values, &log_lr, a.sigma, cfg.components, &em, &mut rng)
            .map_err(|e| e.at_stage(stage("proposal update")))?;
        trace.ess = Some(ess);
        stages.push(trace);
        q = Proposal::Mixture(params);
    }
    assert_eq!(
        g_evals,
        (cfg.m0 + cfg.m_add * k_ad) as u64,
        "true-model cost must equal M_0 + m_add · K_ad"
    );

    let mut frng = stream(seed, STREAM_FINAL);
    let finals = q.sample(cfg.n_final, &mut frng);
    let log_lr = log_ratios(&q, &finals)?;
    let g_final = model.predict(&finals);
    let est = is_estimate(g_final.iter().map(|&g| g <= 0.0), &log_lr);

    Ok(RunResult {
        method: refinement.method(),
        problem: problem.name().to_string(),
        seed,
        estimate: est.value,
        k_ad,
        g_evals,
        stopped,
        sigmas,
        stages,
        proposal: q,
        surrogate: model.as_surrogate().cloned(),
        n_final: cfg.n_final as u64,
        estimator_cov: est.cov,
        final_lr_mean: Some(est.lr_mean),
    })
}

/// ICE with the true performance function at every stage.
pub fn run_ice_true(problem: &Problem, cfg: &IceConfig, seed: u64) -> Result<RunResult> {
    run_ice_true_with(problem, cfg, seed, &mut RunContext::sequential())
}

/// True-model ICE. Each stage evaluates `g` on the whole pool; when the
/// stopping criterion fires, that pool is the final sample. Otherwise `N`
/// fresh samples from the last proposal are evaluated.
pub fn run_ice_true_with(problem: &Problem, cfg: &IceConfig, seed: u64, ctx: &mut RunContext<'_>) -> Result<RunResult> {
    cfg.validate()?;
    let dim = problem.dim();
    let mut rng = stream(seed, STREAM_ADAPT);
    let em = cfg.em_options();
    let mut q = Proposal::Nominal { dim };
    let mut g_evals = 0u64;
    let mut sigmas = Vec::new();
    let mut stages = Vec::new();
    let mut finished: Option<(usize, Estimate)> = None;

    for t in 0..=cfg.t_max {
        let stage = |what: &str| format!("stage {t}: {what}");
        let pool = q.sample(cfg.n_candidates, &mut rng);
        let log_lr = log_ratios(&q, &pool)?;
        let values = ctx
            .exec
            .map(pool.len(), &|i| problem.eval(pool.row(i)))
            .map_err(|e| e.at_stage(stage("true-model evaluation")))?;
        g_evals += pool.len() as u64;
        if t == 0 {
            sigmas.push(cfg.sigma0.unwrap_or_else(|| sigma0_rule(&values)));
        }
        let sigma_prev = *sigmas.last().expect("nonempty");
        let a = assess(&values, &log_lr, sigma_prev, cfg).map_err(|e| e.at_stage(stage("smoothing selection")))?;
        sigmas.push(a.sigma);
        let all: Vec<usize> = (0..pool.len()).collect();
        ctx.notify(&StageView {
            t,
            pool: &pool,
            values: &values,
            log_lr: &log_lr,
            sigma_prev,
            sigma: a.sigma,
            delta_star: a.delta_star,
            selected: &all,
            labels: &values,
        });
        let mut trace = StageTrace {
            t,
            sigma: a.sigma,
            delta_star: finite(a.delta_star),
            weight_cov: a.weight_cov,
            predicted_failures: a.predicted_failures,
            ess: None,
            selected: Vec::new(),
            g_evals,
            train_mse: None,
        };
        if a.delta_star <= cfg.delta_stop {
            stages.push(trace);
            finished = Some((t, is_estimate(values.iter().map(|&g| g <= 0.0), &log_lr)));
            break;
        }
        let (params, ess) = ce_fit(&pool, &values, &log_lr, a.sigma, cfg.components, &em, &mut rng)
            .map_err(|e| e.at_stage(stage("proposal update")))?;
        trace.ess = Some(ess);
        stages.push(trace);
        q = Proposal::Mixture(params);
    }

    let stopped = finished.is_some();
    let (k_ad, n_final, est) = match finished {
        Some((t, est)) => (t, cfg.n_candidates as u64, est),
        None => {
            let mut frng = stream(seed, STREAM_FINAL);
            let finals = q.sample(cfg.n_final, &mut frng);
            let log_lr = log_ratios(&q, &finals)?;
            let values = ctx
                .exec
                .map(finals.len(), &|i| problem.eval(finals.row(i)))
                .map_err(|e| e.at_stage("final estimate"))?;
            g_evals += finals.len() as u64;
            (
                cfg.t_max,
                cfg.n_final as u64,
                is_estimate(values.iter().map(|&g| g <= 0.0), &log_lr),
            )
        }
    };
    Ok(RunResult {
        method: Method::IceTrue,
        problem: problem.name().to_string(),
        seed,
        estimate: est.value,
        k_ad,
        g_evals,
        stopped,
        sigmas,
        stages,
        proposal: q,
        surrogate: None,
        n_final,
        estimator_cov: est.cov,
        final_lr_mean: Some(est.lr_mean),
    })
}

/// Crude Monte Carlo with `n` nominal samples.
pub fn run_cmc(problem: &Problem, n: u64, seed: u64) -> Result<RunResult> {
    run_cmc_with(problem, n, seed, &Sequential)
}

/// Crude Monte Carlo in fixed chunks, each with its own random stream, so the
/// result does not depend on how chunks are scheduled.
pub fn run_cmc_with(problem: &Problem, n: u64, seed: u64, exec: &dyn Executor) -> Result<RunResult> {
    if n == 0 {
        return Err(Error::invalid("crude Monte Carlo needs at least one sample"));
    }
    let dim = problem.dim();
    let chunks = n.div_ceil(CMC_CHUNK);
    let counts = exec.map(chunks as usize, &|c| {
        let c = c as u64;
        let len = CMC_CHUNK.min(n - c * CMC_CHUNK) as usize;
        let mut rng = stream(seed, STREAM_CMC + c);
        let nominal = Proposal::Nominal { dim };
        let mut fails = 0u64;
        let mut done = 0;
        while done < len {
            let batch = (len - done).min(4096);
            let pts = nominal.sample(batch, &mut rng);
            for u in pts.rows() {
                if problem.eval(u)? <= 0.0 {
                    fails += 1;
                }
            }
            done += batch;
        }
        Ok(fails as f64)
    })?;
    let fails: f64 = counts.iter().sum();
    let estimate = fails / n as f64;
    let cov = crate::metrics::cmc_cov(estimate, n);
    if cov.is_none() {
        log::warn!("crude Monte Carlo saw no failures in {n} samples; its CoV is undefined");
    }
    Ok(RunResult {
        method: Method::Cmc,
        problem: problem.name().to_string(),
        seed,
        estimate,
        k_ad: 0,
        g_evals: n,
        stopped: true,
        sigmas: Vec::new(),
        stages: Vec::new(),
        proposal: Proposal::Nominal { dim },
        surrogate: None,
        n_final: n,
        estimator_cov: cov,
        final_lr_mean: None,
    })
}
