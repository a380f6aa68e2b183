//! Weighted expectation-maximization for vMFNM mixtures.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, sqrt};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{log_sum_exp, nakagami_log_normalizer, vmf_log_normalizer, MixtureParams, VmfnmComponent};
use super::{KAPPA_MAX, M_MAX, M_MIN};
use crate::{Error, PointSet, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop when the relative change of the weighted log-likelihood drops below this.
    pub rel_tol: f64,
    pub restarts: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 200,
            rel_tol: 1e-6,
            restarts: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub params: MixtureParams,
    /// Weighted log-likelihood `Σ_i W̄_i ln q(u_i)` at `params`.
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Log-likelihood after every E-step of the winning restart.
    pub history: Vec<f64>,
}

/// Polar form of the data and normalized weights, shared across restarts.
struct Polar {
    dim: usize,
    dirs: Vec<f64>,
    r: Vec<f64>,
    ln_r: Vec<f64>,
    w: Vec<f64>,
}

impl Polar {
    fn dir(&self, i: usize) -> &[f64] {
        &self.dirs[i * self.dim..(i + 1) * self.dim]
    }
}

/// Fits a `k`-component mixture maximizing `Σ_i W̄_i ln q(u_i)`, with
/// `W̄ = weights / Σ weights`. Returns the best of `opts.restarts` runs.
pub fn fit_weighted<R: Rng + ?Sized>(
    samples: &PointSet,
    weights: &[f64],
    k: usize,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<EmFit> {
    let n = samples.len();
    let dim = samples.dim();
    if weights.len() != n {
        return Err(Error::invalid("one weight per sample is required"));
    }
    if k == 0 || n < 10 * k {
        return Err(Error::invalid(format!("weighted EM needs at least 10 samples per component (n = {n}, K = {k})")));
    }
    if dim < 2 {
        return Err(Error::invalid("vMFNM mixtures need dimension >= 2"));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Em("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Em("all weights are zero".into()));
    }

    let mut polar = Polar {
        dim,
        dirs: Vec::with_capacity(n * dim),
        r: Vec::with_capacity(n),
        ln_r: Vec::with_capacity(n),
        w: weights.iter().map(|w| w / total).collect(),
    };
    for (i, u) in samples.rows().enumerate() {
        let r = sqrt(u.iter().map(|x| x * x).sum());
        if r == 0.0 {
            if polar.w[i] > 0.0 {
                return Err(Error::Domain("weighted sample at the origin"));
            }
            // zero-weight origin samples carry no information; park them on an axis
            polar.dirs.push(1.0);
            polar.dirs.extend(core::iter::repeat(0.0).take(dim - 1));
            polar.r.push(1.0);
            polar.ln_r.push(0.0);
            continue;
        }
        polar.dirs.extend(u.iter().map(|x| x / r));
        polar.r.push(r);
        polar.ln_r.push(log(r));
    }

    let mut best: Option<EmFit> = None;
    for restart in 0..opts.restarts.max(1) {
        let fit = run_em(&polar, k, opts, rng).map_err(|e| e.at_stage(format!("EM restart {restart}")))?;
        if best.as_ref().map_or(true, |b| fit.log_likelihood > b.log_likelihood) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn run_em<R: Rng + ?Sized>(data: &Polar, k: usize, opts: &EmOptions, rng: &mut R) -> Result<EmFit> {
    let n = data.r.len();
    let mut params = initialize(data, k, rng);
    let mut resp = vec![0.0; n * k];
    let mut history = Vec::new();
    let mut ll = e_step(data, &params, &mut resp);
    history.push(ll);
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let reinit = m_step(data, &mut params, &resp);
        let next = e_step(data, &params, &mut resp);
        history.push(next);
        if !next.is_finite() {
            return Err(Error::Em("non-finite log-likelihood".into()));
        }
        if !reinit && next < ll - 1e-10 * ll.abs() {
            return Err(Error::Em(format!("log-likelihood decreased from {ll} to {next}")));
        }
        let converged = !reinit && (next - ll).abs() < opts.rel_tol * ll.abs();
        ll = next;
        if converged {
            break;
        }
    }
    Ok(EmFit {
        params,
        log_likelihood: ll,
        iterations,
        history,
    })
}

/// Fills `resp[i*k + j]` with responsibilities and returns the weighted log-likelihood.
fn e_step(data: &Polar, params: &MixtureParams, resp: &mut [f64]) -> f64 {
    let k = params.components.len();
    let consts: Vec<f64> = params
        .components
        .iter()
        .map(|c| {
            log(c.weight) + vmf_log_normalizer(data.dim, c.kappa) + nakagami_log_normalizer(c.m, c.omega)
        })
        .collect();
    let d1 = (data.dim - 1) as f64;
    let mut ll = 0.0;
    for i in 0..data.r.len() {
        let dir = data.dir(i);
        let (r, ln_r) = (data.r[i], data.ln_r[i]);
        let row = &mut resp[i * k..(i + 1) * k];
        for (j, c) in params.components.iter().enumerate() {
            let cos: f64 = c.mean.iter().zip(dir).map(|(a, b)| a * b).sum();
            row[j] = consts[j] + c.kappa * cos + (2.0 * c.m - 1.0 - d1) * ln_r - c.m * r * r / c.omega;
        }
        let lse = log_sum_exp(row.iter().copied());
        for v in row.iter_mut() {
            *v = exp(*v - lse);
        }
        if data.w[i] > 0.0 {
            ll += data.w[i] * lse;
        }
    }
    ll
}

/// Weighted radial moments `(Ω, m)` of `r²`.
fn radial_moments(data: &Polar, weight: impl Fn(usize) -> f64) -> (f64, f64, f64) {
    let (mut mass, mut s1) = (0.0, 0.0);
    for (i, r) in data.r.iter().enumerate() {
        let w = weight(i);
        mass += w;
        s1 += w * r * r;
    }
    let omega = s1 / mass;
    let mut var = 0.0;
    for (i, r) in data.r.iter().enumerate() {
        let dv = r * r - omega;
        var += weight(i) * dv * dv;
    }
    var /= mass;
    let m = if var > 0.0 { (omega * omega / var).clamp(M_MIN, M_MAX) } else { M_MAX };
    (mass, omega, m)
}

fn banerjee_kappa(rbar: f64, dim: usize) -> f64 {
    let d = dim as f64;
    if rbar >= 1.0 - 1e-12 {
        return KAPPA_MAX;
    }
    (rbar * (d - rbar * rbar) / (1.0 - rbar * rbar)).clamp(0.0, KAPPA_MAX)
}

/// Weighted spherical k-means++ seeding plus a few Lloyd sweeps on directions.
fn initialize<R: Rng + ?Sized>(data: &Polar, k: usize, rng: &mut R) -> MixtureParams {
    let n = data.r.len();
    let dim = data.dim;
    let unif = Uniform::new(0.0, 1.0).expect("valid range");
    let draw = |probs: &[f64], rng: &mut R| -> usize {
        let total: f64 = probs.iter().sum();
        let mut t = unif.sample(rng) * total;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last = i;
                if t < p {
                    return i;
                }
                t -= p;
            }
        }
        last
    };
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(data.dir(draw(&data.w, rng)).to_vec());
    let mut dist = vec![f64::INFINITY; n];
    while centers.len() < k {
        let last = centers.last().expect("nonempty");
        let mut probs = vec![0.0; n];
        for i in 0..n {
            let cos: f64 = last.iter().zip(data.dir(i)).map(|(a, b)| a * b).sum();
            dist[i] = dist[i].min(1.0 - cos);
            probs[i] = data.w[i] * dist[i].max(0.0);
        }
        let idx = if probs.iter().sum::<f64>() > 0.0 { draw(&probs, rng) } else { draw(&data.w, rng) };
        centers.push(data.dir(idx).to_vec());
    }

    let mut assign = vec![0usize; n];
    for _ in 0..10 {
        for (i, a) in assign.iter_mut().enumerate() {
            let dir = data.dir(i);
            let mut best = (f64::NEG_INFINITY, 0);
            for (j, c) in centers.iter().enumerate() {
                let cos: f64 = c.iter().zip(dir).map(|(a, b)| a * b).sum();
                if cos > best.0 {
                    best = (cos, j);
                }
            }
            *a = best.1;
        }
        for (j, c) in centers.iter_mut().enumerate() {
            let mut sum = vec![0.0; dim];
            for i in (0..n).filter(|&i| assign[i] == j) {
                sum.iter_mut().zip(data.dir(i)).for_each(|(s, x)| *s += data.w[i] * x);
            }
            let norm = sqrt(sum.iter().map(|x| x * x).sum());
            if norm > 0.0 {
                *c = sum.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    let (_, omega, m) = radial_moments(data, |i| data.w[i]);
    let components = centers
        .into_iter()
        .enumerate()
        .map(|(j, mean)| {
            let (mut mass, mut res) = (0.0, 0.0);
            for i in (0..n).filter(|&i| assign[i] == j) {
                mass += data.w[i];
                res += data.w[i] * mean.iter().zip(data.dir(i)).map(|(a, b)| a * b).sum::<f64>();
            }
            let kappa = if mass > 0.0 { banerjee_kappa((res / mass).max(0.0), dim) } else { 0.0 };
            VmfnmComponent {
                weight: 1.0 / k as f64,
                mean,
                kappa,
                m,
                omega,
            }
        })
        .collect();
    MixtureParams { dim, components }
}

/// One generalized M-step. Returns `true` if a starved component was reseeded.
fn m_step(data: &Polar, params: &mut MixtureParams, resp: &[f64]) -> bool {
    let k = params.components.len();
    let n = data.r.len();
    let dim = data.dim;
    let masses: Vec<f64> = (0..k).map(|j| (0..n).map(|i| data.w[i] * resp[i * k + j]).sum()).collect();
    let total: f64 = masses.iter().sum();
    let mut reinit = false;
    for (j, comp) in params.components.iter_mut().enumerate() {
        let mass = masses[j];
        if mass < 1e-8 * total {
            let top = (0..n).max_by(|&a, &b| data.w[a].total_cmp(&data.w[b])).expect("nonempty");
            log::warn!("EM component {j} starved (mass {mass:e}); reseeding at the heaviest sample");
            comp.mean = data.dir(top).to_vec();
            comp.weight = 1.0 / k as f64;
            reinit = true;
            continue;
        }
        comp.weight = mass / total;

        let mut resultant = vec![0.0; dim];
        for i in 0..n {
            let g = data.w[i] * resp[i * k + j];
            if g > 0.0 {
                resultant.iter_mut().zip(data.dir(i)).for_each(|(s, x)| *s += g * x);
            }
        }
        let len = sqrt(resultant.iter().map(|x| x * x).sum());
        if len > 0.0 {
            comp.mean = resultant.iter().map(|x| x / len).collect();
        }
        // keep κ_old when the closed-form estimate would lower this component's objective
        let kappa_new = banerjee_kappa(len / mass, dim);
        let q_dir = |kappa: f64| mass * vmf_log_normalizer(dim, kappa) + kappa * len;
        if q_dir(kappa_new) >= q_dir(comp.kappa) {
            comp.kappa = kappa_new;
        }

        let (_, omega, m_new) = radial_moments(data, |i| data.w[i] * resp[i * k + j]);
        let (mut s_lnr, mut s_r2) = (0.0, 0.0);
        for i in 0..n {
            let g = data.w[i] * resp[i * k + j];
            s_lnr += g * data.ln_r[i];
            s_r2 += g * data.r[i] * data.r[i];
        }
        let q_rad = |m: f64| mass * nakagami_log_normalizer(m, omega) + (2.0 * m - 1.0) * s_lnr - m * s_r2 / omega;
        comp.omega = omega;
        if q_rad(m_new) >= q_rad(comp.m) {
            comp.m = m_new;
        }
    }
    if reinit {
        let sum: f64 = params.components.iter().map(|c| c.weight).sum();
        params.components.iter_mut().for_each(|c| c.weight /= sum);
    }
    reinit
}
