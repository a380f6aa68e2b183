//! Proposal densities: the standard normal nominal density and mixtures of
//! von Mises-Fisher-Nakagami (vMFNM) distributions.
//!
//! A vMFNM component factorizes `u = r a` into a direction `a` on the unit
//! sphere, von Mises-Fisher distributed, and a radius `r`, Nakagami
//! distributed. As a density on `R^d` this reads
//!
//! ```text
//! q(u) = C_d(κ) exp(κ μᵀa) · f_Nak(r; m, Ω) / r^(d-1)
//! ```

mod em;

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, sqrt};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::special::{ln_gamma, ln_sphere_area, log_bessel_i, LN_2PI};
use crate::{Error, PointSet, Result};

pub use em::{fit_weighted, EmFit, EmOptions};

pub const KAPPA_MAX: f64 = 1e5;
pub const M_MIN: f64 = 0.5;
pub const M_MAX: f64 = 1e3;

/// `ln p(u)` for `p = N(0, I_d)`.
#[inline]
pub fn nominal_logpdf(u: &[f64]) -> f64 {
    let sq: f64 = u.iter().map(|x| x * x).sum();
    -0.5 * u.len() as f64 * LN_2PI - 0.5 * sq
}

/// `ln C_d(κ)`, the von Mises-Fisher normalizer on `S^{d-1}`.
pub fn vmf_log_normalizer(dim: usize, kappa: f64) -> f64 {
    if kappa <= 0.0 {
        return -ln_sphere_area(dim);
    }
    let nu = 0.5 * dim as f64 - 1.0;
    nu * log(kappa) - 0.5 * dim as f64 * LN_2PI - log_bessel_i(nu, kappa)
}

/// `ln f_Nak(r; m, Ω)` without the `(2m-1) ln r - m r²/Ω` part.
fn nakagami_log_normalizer(m: f64, omega: f64) -> f64 {
    core::f64::consts::LN_2 + m * log(m) - ln_gamma(m) - m * log(omega)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmfnmComponent {
    pub weight: f64,
    /// Unit mean direction.
    pub mean: Vec<f64>,
    pub kappa: f64,
    /// Nakagami shape.
    pub m: f64,
    /// Nakagami spread, `E[r²]`.
    pub omega: f64,
}

impl VmfnmComponent {
    /// `ln q_k(u)` (unweighted) from precomputed polar coordinates.
    pub fn log_density_polar(&self, dir: &[f64], r: f64, ln_r: f64) -> f64 {
        let d = dir.len() as f64;
        let cos: f64 = self.mean.iter().zip(dir).map(|(a, b)| a * b).sum();
        vmf_log_normalizer(dir.len(), self.kappa)
            + self.kappa * cos
            + nakagami_log_normalizer(self.m, self.omega)
            + (2.0 * self.m - 1.0) * ln_r
            - self.m * r * r / self.omega
            - (d - 1.0) * ln_r
    }
}

/// Parameters of a `K`-component vMFNM mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub dim: usize,
    pub components: Vec<VmfnmComponent>,
}

impl MixtureParams {
    /// Checks the invariants: unit means, positive weights summing to one,
    /// `κ >= 0`, `m` within its clamp range and `Ω > 0`.
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("vMFNM mixtures need dimension >= 2"));
        }
        if self.components.is_empty() {
            return Err(Error::invalid("mixture has no components"));
        }
        let mut total = 0.0;
        for c in &self.components {
            if c.mean.len() != self.dim {
                return Err(Error::invalid("component mean has the wrong dimension"));
            }
            let norm = sqrt(c.mean.iter().map(|x| x * x).sum());
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::invalid("component mean is not a unit vector"));
            }
            if !(c.weight >= 0.0 && c.kappa >= 0.0 && c.omega > 0.0 && (M_MIN..=M_MAX).contains(&c.m)) {
                return Err(Error::invalid("component parameters out of range"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid("mixture weights do not sum to one"));
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// `ln q(u)`. Undefined at the origin.
    pub fn logpdf(&self, u: &[f64]) -> Result<f64> {
        let r = sqrt(u.iter().map(|x| x * x).sum());
        if r == 0.0 {
            return Err(Error::Domain("vMFNM density is undefined at the origin"));
        }
        let dir: Vec<f64> = u.iter().map(|x| x / r).collect();
        let ln_r = log(r);
        Ok(log_sum_exp(self.components.iter().map(|c| log(c.weight) + c.log_density_polar(&dir, r, ln_r))))
    }

    /// Draws `n` samples; also returns the component each came from.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (PointSet, Vec<usize>) {
        let mut out = PointSet::with_capacity(self.dim, n);
        let mut labels = Vec::with_capacity(n);
        let mut buf = vec![0.0; self.dim];
        let unif = Uniform::new(0.0, 1.0).expect("valid range");
        for _ in 0..n {
            let pick: f64 = unif.sample(rng);
            let mut acc = 0.0;
            let mut k = self.components.len() - 1;
            for (j, c) in self.components.iter().enumerate() {
                acc += c.weight;
                if pick < acc && c.weight > 0.0 {
                    k = j;
                    break;
                }
            }
            let c = &self.components[k];
            sample_vmf(&c.mean, c.kappa, rng, &mut buf);
            let s: f64 = Gamma::new(c.m, c.omega / c.m).expect("valid Nakagami parameters").sample(rng);
            let r = sqrt(s);
            buf.iter_mut().for_each(|x| *x *= r);
            out.push(&buf);
            labels.push(k);
        }
        (out, labels)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> PointSet {
        self.sample_labeled(n, rng).0
    }
}

/// Wood's rejection sampler for the von Mises-Fisher distribution.
pub fn sample_vmf<R: Rng + ?Sized>(mean: &[f64], kappa: f64, rng: &mut R, out: &mut [f64]) {
    let d = mean.len();
    if kappa <= 0.0 {
        uniform_direction(rng, out);
        return;
    }
    let dm1 = (d - 1) as f64;
    let b = dm1 / (2.0 * kappa + sqrt(4.0 * kappa * kappa + dm1 * dm1));
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * log(1.0 - x0 * x0);
    let beta = Beta::new(0.5 * dm1, 0.5 * dm1).expect("valid beta parameters");
    let unif = Uniform::new(0.0, 1.0).expect("valid range");
    let mut w = f64::NAN;
    for _ in 0..1_000_000 {
        let z: f64 = beta.sample(rng);
        let cand = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let v: f64 = unif.sample(rng);
        if kappa * cand + dm1 * log(1.0 - x0 * cand) - c >= log(v) {
            w = cand;
            break;
        }
    }
    assert!(w.is_finite(), "vMF rejection sampler did not accept within 10^6 trials");
    // tangent direction orthogonal to the mean
    loop {
        uniform_direction(rng, out);
        let proj: f64 = out.iter().zip(mean).map(|(a, b)| a * b).sum();
        out.iter_mut().zip(mean).for_each(|(o, m)| *o -= proj * m);
        let norm = sqrt(out.iter().map(|x| x * x).sum());
        if norm > 1e-12 {
            let s = sqrt((1.0 - w * w).max(0.0)) / norm;
            out.iter_mut().zip(mean).for_each(|(o, m)| *o = w * m + s * *o);
            return;
        }
    }
}

fn uniform_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        for o in out.iter_mut() {
            *o = StandardNormal.sample(rng);
        }
        let norm = sqrt(out.iter().map(|x| x * x).sum());
        if norm > 0.0 {
            out.iter_mut().for_each(|o| *o /= norm);
            return;
        }
    }
}

pub(crate) fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + log(terms.map(|t| exp(t - max)).sum::<f64>())
}

/// The proposal in use at one ICE stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Proposal {
    Nominal { dim: usize },
    Mixture(MixtureParams),
}

impl Proposal {
    pub fn dim(&self) -> usize {
        match self {
            Proposal::Nominal { dim } => *dim,
            Proposal::Mixture(p) => p.dim,
        }
    }

    pub fn logpdf(&self, u: &[f64]) -> Result<f64> {
        match self {
            Proposal::Nominal { .. } => Ok(nominal_logpdf(u)),
            Proposal::Mixture(p) => p.logpdf(u),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> PointSet {
        match self {
            Proposal::Nominal { dim } => {
                let data = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
                PointSet::from_flat(*dim, data)
            }
            Proposal::Mixture(p) => p.sample(n, rng),
        }
    }

    /// `ln p(u) - ln q(u)`.
    pub fn log_likelihood_ratio(&self, u: &[f64]) -> Result<f64> {
        match self {
            Proposal::Nominal { .. } => Ok(0.0),
            Proposal::Mixture(p) => Ok(nominal_logpdf(u) - p.logpdf(u)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use rand::SeedableRng;

    fn single(dim: usize, kappa: f64, m: f64, omega: f64) -> MixtureParams {
        let mut mean = vec![0.0; dim];
        mean[0] = 1.0;
        MixtureParams {
            dim,
            components: vec![VmfnmComponent {
                weight: 1.0,
                mean,
                kappa,
                m,
                omega,
            }],
        }
    }

    #[test]
    fn nominal_peak_values() {
        assert!((nominal_logpdf(&[0.0, 0.0]) + 1.837_877_066_409_345).abs() < 1e-14);
        assert!((nominal_logpdf(&[0.0; 100]) + 50.0 * LN_2PI).abs() < 1e-11);
    }

    #[test]
    fn nominal_integrates_to_one_on_a_grid() {
        let (n, lim) = (400, 8.0);
        let h = 2.0 * lim / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = -lim + (i as f64 + 0.5) * h;
                let y = -lim + (j as f64 + 0.5) * h;
                total += exp(nominal_logpdf(&[x, y])) * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn uniform_direction_on_the_two_sphere() {
        assert!((vmf_log_normalizer(3, 0.0) + log(4.0 * PI)).abs() < 1e-14);
        // continuity as κ -> 0
        assert!((vmf_log_normalizer(3, 1e-9) + log(4.0 * PI)).abs() < 1e-8);
        // closed form on S²: C_3(κ) = κ / (4π sinh κ)
        for k in [0.5, 3.0, 40.0] {
            let want = log(k / (4.0 * PI * libm::sinh(k)));
            assert!((vmf_log_normalizer(3, k) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_components_collapse() {
        let one = single(4, 3.0, 1.5, 2.0);
        let mut two = one.clone();
        let mut c = two.components[0].clone();
        two.components[0].weight = 0.3;
        c.weight = 0.7;
        two.components.push(c);
        two.validate().unwrap();
        for u in [[0.3, -1.0, 2.0, 0.1], [5.0, 0.0, 0.0, 0.0]] {
            assert!((one.logpdf(&u).unwrap() - two.logpdf(&u).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn origin_is_a_domain_error() {
        assert!(matches!(single(2, 1.0, 1.0, 1.0).logpdf(&[0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn isotropic_component_self_normalizes() {
        // E_p[q/p] = 1 for κ = 0, m = 1, Ω = d
        let d = 6;
        let q = single(d, 0.0, 1.0, d as f64);
        let mut rng = crate::SeededRng::seed_from_u64(5);
        let nom = Proposal::Nominal { dim: d };
        let pts = nom.sample(200_000, &mut rng);
        let mean = pts
            .rows()
            .map(|u| exp(q.logpdf(u).unwrap() - nominal_logpdf(u)))
            .sum::<f64>()
            / pts.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn weight_one_zero_draws_only_the_first() {
        let mut p = single(3, 5.0, 1.0, 1.0);
        let mut c = p.components[0].clone();
        c.weight = 0.0;
        c.mean = vec![0.0, 1.0, 0.0];
        p.components.push(c);
        let mut rng = crate::SeededRng::seed_from_u64(1);
        let (_, labels) = p.sample_labeled(5000, &mut rng);
        assert!(labels.iter().all(|&k| k == 0));
    }

    #[test]
    fn concentrated_directions_and_radial_moment() {
        let p = single(10, 50.0, 2.0, 7.0);
        let mut rng = crate::SeededRng::seed_from_u64(2);
        let pts = p.sample(10_000, &mut rng);
        let n = pts.len() as f64;
        let (mut c1, mut c2) = (0.0, 0.0);
        let (mut s, mut s2) = (0.0, 0.0);
        for u in pts.rows() {
            let r2: f64 = u.iter().map(|x| x * x).sum();
            let cos = u[0] / sqrt(r2);
            c1 += cos;
            c2 += cos * cos;
            s += r2;
            s2 += r2 * r2;
        }
        // E[μᵀa] = I_5(50) / I_4(50)
        let want = 0.913_209_599_873_740_7;
        let cos_se = sqrt((c2 / n - (c1 / n).powi(2)) / n);
        assert!((c1 / n - want).abs() <= 3.0 * cos_se, "{} vs {want}", c1 / n);
        let ratio = exp(log_bessel_i(5.0, 50.0) - log_bessel_i(4.0, 50.0));
        assert!((ratio - want).abs() < 1e-12);
        let mean = s / n;
        let se = sqrt((s2 / n - mean * mean) / n);
        assert!((mean - 7.0).abs() <= 3.0 * se, "{mean} ± {se}");
    }
}
