use pggr_core::proposal::{fit_weighted, nominal_logpdf, EmOptions, MixtureParams, Proposal, VmfnmComponent};
use pggr_core::{PointSet, SeededRng};
use proptest::prelude::*;
use rand::SeedableRng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Gamma};

fn axis(dim: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    v
}

fn single(dim: usize, kappa: f64, m: f64, omega: f64) -> MixtureParams {
    MixtureParams {
        dim,
        components: vec![VmfnmComponent {
            weight: 1.0,
            mean: axis(dim, 0),
            kappa,
            m,
            omega,
        }],
    }
}

#[test]
fn standard_normal_radii_give_omega_near_d() {
    let mut rng = SeededRng::seed_from_u64(1);
    let pts = Proposal::Nominal { dim: 100 }.sample(10_000, &mut rng);
    let fit = fit_weighted(&pts, &vec![1.0; 10_000], 1, &EmOptions::default(), &mut rng).unwrap();
    let omega = fit.params.components[0].omega;
    assert!((95.0..=105.0).contains(&omega), "Ω = {omega}");
}

#[test]
fn recovers_known_single_component() {
    let truth = single(5, 20.0, 2.0, 4.0);
    let mut rng = SeededRng::seed_from_u64(2);
    let pts = truth.sample(10_000, &mut rng);
    let fit = fit_weighted(&pts, &vec![1.0; 10_000], 1, &EmOptions::default(), &mut rng).unwrap();
    let c = &fit.params.components[0];
    assert!((c.kappa - 20.0).abs() / 20.0 < 0.1, "κ = {}", c.kappa);
    assert!((c.m - 2.0).abs() / 2.0 < 0.1, "m = {}", c.m);
    assert!((c.omega - 4.0).abs() / 4.0 < 0.1, "Ω = {}", c.omega);
    assert!(c.mean[0] > 0.99);
}

#[test]
fn separated_modes_are_found_with_restarts() {
    let mut truth = single(2, 80.0, 30.0, 16.0);
    truth.components[0].weight = 0.5;
    let mut other = truth.components[0].clone();
    other.mean = vec![-1.0, 0.0];
    truth.components.push(other);
    let mut rng = SeededRng::seed_from_u64(3);
    let pts = truth.sample(4000, &mut rng);
    let opts = EmOptions {
        restarts: 5,
        ..Default::default()
    };
    let fit = fit_weighted(&pts, &vec![1.0; 4000], 2, &opts, &mut rng).unwrap();
    let mut xs: Vec<f64> = fit.params.components.iter().map(|c| c.mean[0]).collect();
    xs.sort_by(f64::total_cmp);
    assert!(xs[0] < -0.99 && xs[1] > 0.99, "{xs:?}");
    for c in &fit.params.components {
        assert!((c.weight - 0.5).abs() < 0.05);
    }
}

#[test]
fn weighted_log_likelihood_is_monotone() {
    let mut rng = SeededRng::seed_from_u64(4);
    let pts = Proposal::Nominal { dim: 6 }.sample(3000, &mut rng);
    // tilt the weights toward the first axis so the fit has something to find
    let w: Vec<f64> = pts.rows().map(|u| (2.0 * u[0] - 0.3 * u[1]).exp()).collect();
    let fit = fit_weighted(&pts, &w, 3, &EmOptions::default(), &mut rng).unwrap();
    assert!(fit.history.len() >= 2);
    for pair in fit.history.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-10 * pair[0].abs(), "{pair:?}");
    }
    fit.params.validate().unwrap();
}

#[test]
fn input_errors() {
    let mut rng = SeededRng::seed_from_u64(5);
    let pts = Proposal::Nominal { dim: 3 }.sample(50, &mut rng);
    assert!(fit_weighted(&pts, &[0.0; 50], 1, &EmOptions::default(), &mut rng).is_err());
    assert!(fit_weighted(&pts, &[1.0; 50], 6, &EmOptions::default(), &mut rng).is_err());
    assert!(fit_weighted(&pts, &[1.0; 49], 1, &EmOptions::default(), &mut rng).is_err());
}

#[test]
fn starved_component_is_reseeded() {
    // all weight on a tight cluster: one of the two components starves at some point
    let mut rng = SeededRng::seed_from_u64(6);
    let pts = Proposal::Nominal { dim: 3 }.sample(400, &mut rng);
    let w: Vec<f64> = pts.rows().map(|u| if u[0] > 1.5 { 1.0 } else { 0.0 }).collect();
    let fit = fit_weighted(&pts, &w, 2, &EmOptions::default(), &mut rng).unwrap();
    fit.params.validate().unwrap();
}

#[test]
fn polar_histogram_matches_product_density() {
    // d = 3: cos θ has density κ e^{κt} / (2 sinh κ), r² ~ Gamma(m, Ω/m)
    let (kappa, m, omega) = (4.0, 1.7, 2.5);
    let q = single(3, kappa, m, omega);
    let mut rng = SeededRng::seed_from_u64(7);
    let n = 100_000;
    let pts = q.sample(n, &mut rng);

    let bins = 10;
    let cos_edge = |p: f64| ((-kappa).exp() + p * (kappa.exp() - (-kappa).exp())).ln() / kappa;
    let gamma = Gamma::new(m, m / omega).unwrap();
    let r2_edges: Vec<f64> = (1..bins).map(|j| gamma.inverse_cdf(j as f64 / bins as f64)).collect();
    let cos_edges: Vec<f64> = (1..bins).map(|j| cos_edge(j as f64 / bins as f64)).collect();
    let bin_of = |edges: &[f64], x: f64| edges.iter().take_while(|&&e| x > e).count();

    let mut counts = vec![0.0; bins * bins];
    for u in pts.rows() {
        let r2: f64 = u.iter().map(|x| x * x).sum();
        let cos = u[0] / r2.sqrt();
        counts[bin_of(&cos_edges, cos) * bins + bin_of(&r2_edges, r2)] += 1.0;
    }
    let expected = n as f64 / (bins * bins) as f64;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((bins * bins - 1) as f64).unwrap().cdf(stat);
    assert!(p > 1e-3, "chi-square {stat}, p = {p}");
}

fn arb_mixture(dim: usize) -> impl Strategy<Value = MixtureParams> {
    let comp = (
        prop::collection::vec(-1.0f64..1.0, dim),
        0.05f64..1.0,
        0.0f64..5.0,
        0.5f64..1.5,
        1.0f64..3.0,
    );
    prop::collection::vec(comp, 1..=3).prop_filter_map("degenerate mean", move |cs| {
        let total: f64 = cs.iter().map(|c| c.1).sum();
        let mut components = Vec::new();
        for (v, w, kappa, m, scale) in cs {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-3 {
                return None;
            }
            components.push(VmfnmComponent {
                weight: w / total,
                mean: v.iter().map(|x| x / norm).collect(),
                kappa,
                m,
                omega: scale * dim as f64,
            });
        }
        Some(MixtureParams { dim, components })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn importance_ratio_has_unit_mean(q in (2usize..=10).prop_flat_map(arb_mixture), seed in 0u64..1000) {
        q.validate().unwrap();
        let mut rng = SeededRng::seed_from_u64(seed);
        let n = 100_000;
        let pts = q.sample(n, &mut rng);
        let ratios: Vec<f64> = pts.rows().map(|u| (nominal_logpdf(u) - q.logpdf(u).unwrap()).exp()).collect();
        let mean = ratios.iter().sum::<f64>() / n as f64;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        prop_assert!((mean - 1.0).abs() <= 3.0 * se, "mean {} se {}", mean, se);
    }
}

proptest! {
    #[test]
    fn logpdf_finite_off_the_origin(
        q in (2usize..=8).prop_flat_map(arb_mixture),
        scale in 1e-3f64..50.0,
        raw in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let u: Vec<f64> = raw[..q.dim].iter().map(|x| x * scale).collect();
        prop_assume!(u.iter().any(|x| *x != 0.0));
        prop_assert!(q.logpdf(&u).unwrap().is_finite());
    }

    #[test]
    fn fitted_mixtures_satisfy_invariants(seed in 0u64..500, k in 1usize..=3, dim in 2usize..=6) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let pts: PointSet = Proposal::Nominal { dim }.sample(200, &mut rng);
        let w: Vec<f64> = pts.rows().map(|u| u[0].exp()).collect();
        let fit = fit_weighted(&pts, &w, k, &EmOptions { max_iter: 30, ..Default::default() }, &mut rng).unwrap();
        prop_assert!(fit.params.validate().is_ok());
        prop_assert_eq!(fit.params.n_components(), k);
    }
}
