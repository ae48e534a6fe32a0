//! Invariants over random inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recursub::diagnostics::{compute_fraction, longest_immobility_streak};
use recursub::estimators::{build_control_variates, exact_variance, wde_loglik};
use recursub::inference::{
    run_chain, stationary_constrained_propose, ChainSettings, ExactTarget, GaussianMeanModel, GaussianPrior, Posterior, ProposalSpace,
    StationaryMap,
};
use recursub::model::{
    is_stationary, simulate, DerivLevel, ErrorLaw, Family, LikelihoodModel, ModelSpec, PreSample, ReparamMap, TermModel,
};
use recursub::scheme::{gamma_max, tail_mass, SamplingScheme, SchemeSpec};
use recursub::tuning::{expected_umax, expected_umax_bound};

fn family() -> impl Strategy<Value = ModelSpec> {
    (
        prop_oneof![Just(Family::Garch), Just(Family::Tgarch)],
        1usize..=2,
        1usize..=2,
        prop_oneof![Just(ErrorLaw::Normal), Just(ErrorLaw::StudentT)],
    )
        .prop_map(|(f, p, q, e)| ModelSpec::new(f, p, q, e).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn stationary_proposals_stay_stationary(spec in family(), psi in prop::collection::vec(-6.0f64..6.0, 10), seed in 0u64..1000) {
        let map = StationaryMap::new(spec);
        let psi = &psi[..spec.dim()];
        let n = spec.dim();
        let chol = nalgebra::DMatrix::identity(n, n) * 3.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (psi2, phi2, _) = stationary_constrained_propose(&map, psi, &chol, &mut rng).unwrap();
        let theta = map.psi_to_theta(&psi2);
        prop_assert!(is_stationary(&spec, &theta));
        prop_assert!(theta[1..spec.layout().dim_v].iter().all(|&v| v > 0.0));
        let back = ReparamMap::for_spec(&spec).to_theta(&phi2).unwrap();
        for (a, b) in back.iter().zip(&theta) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn stationary_map_round_trips(spec in family(), psi in prop::collection::vec(-4.0f64..4.0, 10)) {
        let map = StationaryMap::new(spec);
        let psi = &psi[..spec.dim()];
        let back = map.theta_to_psi(&map.psi_to_theta(psi)).unwrap();
        for (a, b) in back.iter().zip(psi) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn tpd_probabilities_are_a_decaying_head_and_flat_tail(t_len in 20usize..400, frac in 0.05f64..0.9, gamma in 0.0f64..5.0, b in 0.0f64..50.0) {
        let t_star = ((t_len as f64 * frac) as usize).clamp(2, t_len - 1);
        let s = SamplingScheme::build(SchemeSpec::tpd(gamma, t_star, b, t_len)).unwrap();
        let p = s.probs();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p[..t_star].windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(p[t_star..].iter().all(|&q| (q - p[t_star]).abs() <= 1e-12 * p[t_star]));
        let eps: f64 = p[t_star..].iter().sum();
        prop_assert!((eps - tail_mass(gamma, t_star, b, t_len).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn gamma_max_respects_the_floor(t_len in 50usize..2000, c in 0.005f64..1.0, b in 0.0f64..100.0) {
        let t_star = (t_len / 5).max(2);
        let g = gamma_max(c, t_star, b, t_len).unwrap();
        let per_tail = tail_mass(g, t_star, b, t_len).unwrap() / (t_len - t_star) as f64;
        prop_assert!(per_tail * t_len as f64 >= c * (1.0 - 1e-9));
        let g_lower = gamma_max((c * 0.5).max(1e-4), t_star, b, t_len).unwrap();
        prop_assert!(g_lower >= g);
    }

    #[test]
    fn expected_cost_is_bounded_and_grows_with_m(t_len in 20usize..500, c in 0.01f64..1.0, m in 1usize..50) {
        let t_star = (t_len / 4).max(2);
        let s = SamplingScheme::tpd_for_floor(c, t_star, 10.0, t_len).unwrap();
        let e = expected_umax(s.probs(), m);
        prop_assert!(e >= 1.0 - 1e-9 && e <= t_len as f64);
        prop_assert!(e <= expected_umax_bound(t_star, t_len, s.tail_mass().unwrap(), m) * (1.0 + 1e-12));
        prop_assert!(expected_umax(s.probs(), m + 1) > e);
    }

    #[test]
    fn exact_variance_is_non_negative(res in prop::collection::vec(-1.0f64..1.0, 30), c in 0.01f64..1.0, m in 1usize..10) {
        let s = SamplingScheme::tpd_for_floor(c, 5, 1.0, 30).unwrap();
        prop_assert!(exact_variance(&res, s.probs(), m).unwrap() >= 0.0);
    }

    #[test]
    fn perfect_control_variates_give_exact_estimates(seed in 0u64..500, m in 1usize..6, shift in -1.0f64..1.0) {
        // every ℓ_t of the Gaussian-mean model is quadratic, so the residuals vanish
        let data: Vec<Vec<f64>> = (0..40).map(|t| vec![(t as f64 * 0.37).sin(), (t as f64 * 0.11).cos()]).collect();
        let model = GaussianMeanModel::new(data, 1.3).unwrap();
        let cache = build_control_variates(&model, &[0.0, 0.0]).unwrap();
        let phi = [shift, -shift * 0.5];
        let s = SamplingScheme::tpd_for_floor(0.1, 5, 1.0, 40).unwrap();
        let sub = s.draw_indices(m, &mut ChaCha8Rng::seed_from_u64(seed));
        let est = wde_loglik(&model, &cache, &s, &phi, &sub).unwrap();
        let exact = model.log_likelihood(&phi).unwrap();
        prop_assert!((est.value - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn immobility_streak_is_below_length(states in prop::collection::vec(0u8..3, 0..60)) {
        let lis = longest_immobility_streak(&states);
        prop_assert!(lis <= states.len().saturating_sub(1));
    }
}

#[test]
fn homogeneous_tail_variance_grows_with_decay() {
    // e_t ≡ 1: the tail indices' share of the variance sum increases as γ grows
    let (t_len, t_star) = (100, 20);
    let res = vec![1.0; t_len];
    let total = t_len as f64;
    let mut prev = -1.0;
    for gamma in [0.0, 0.5, 1.0, 2.0] {
        let s = SamplingScheme::build(SchemeSpec::tpd(gamma, t_star, 1.0, t_len)).unwrap();
        let tail: f64 = s.probs()[t_star..].iter().zip(&res[t_star..]).map(|(p, e)| p * (e / p - total).powi(2)).sum();
        assert!(tail > prev, "gamma={gamma}: {tail} <= {prev}");
        prev = tail;
    }
    assert_eq!(exact_variance(&res, SamplingScheme::uniform(t_len).unwrap().probs(), 1).unwrap(), 0.0);
}

#[test]
fn control_variate_remainder_is_cubic() {
    let spec = ModelSpec::new(Family::Tgarch, 1, 1, ErrorLaw::StudentT).unwrap();
    let truth = [0.05, 0.1, 0.05, 0.1, 0.75, 7.0];
    let data = simulate(&spec, &truth, 30, &PreSample::constant(1, 1, 0.0, 1.0).unwrap(), 3).unwrap();
    let model = LikelihoodModel::new(spec, data, None).unwrap();
    let star = model.map.to_phi(&truth).unwrap();
    let cache = build_control_variates(&model, &star).unwrap();
    let dir = [0.3, -0.5, 0.2, 0.4, -0.1, 0.6];
    let norm = dir.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
    let mut ratios = Vec::new();
    for r in [1e-1, 1e-2, 1e-3] {
        let phi: Vec<f64> = star.iter().zip(dir).map(|(s, d)| s + r * d).collect();
        let path = model.terms(&phi, 30, DerivLevel::None).unwrap();
        let worst = (1..=30).map(|t| (path.per_obs[t - 1].ell - cache.q_t(t, &phi).unwrap()).abs()).fold(0.0, f64::max);
        ratios.push(worst / (r * norm).powi(3));
    }
    // bounded: the ratio does not blow up as the radius shrinks
    assert!(ratios[2] < 10.0 * ratios[0].max(1e-6), "{ratios:?}");
    assert!(ratios[1] < 10.0 * ratios[0].max(1e-6), "{ratios:?}");
}

#[test]
fn exact_chain_costs_one_full_pass_per_iteration() {
    let data: Vec<Vec<f64>> = (0..25).map(|t| vec![t as f64 / 25.0]).collect();
    let model = GaussianMeanModel::new(data, 1.0).unwrap();
    let prior = GaussianPrior { sd: 3.0 };
    let target = ExactTarget { density: Posterior::new(&model, &prior), t_len: 25 };
    let settings = ChainSettings { iterations: 200, burn_in: 50, seed: 1, ..Default::default() };
    let cov = nalgebra::DMatrix::identity(1, 1) * 0.05;
    let out = run_chain(&target, &[0.5], &cov, &ProposalSpace::Phi, &settings).unwrap();
    assert_eq!(compute_fraction(&out.u_max, 0, 25), 1.0);
}
