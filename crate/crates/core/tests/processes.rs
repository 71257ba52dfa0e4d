use std::sync::Arc;

use weakdep::dependence::tv_gamma;
use weakdep::measures::{DiscreteSpace, PathMeasure};
use weakdep::processes::{
    decay_rate, estimate_gamma, simulate, Drift, Innovation, PairSampler, ProcessSpec, Volatility,
};

#[test]
fn finite_chain_estimate_matches_total_variation_oracle() {
    let rows = vec![vec![0.7, 0.3], vec![0.3, 0.7]];
    let spec = ProcessSpec::FiniteChain { rows: rows.clone() };
    let est = estimate_gamma(&spec, 2.0, 3, 10_000, &PairSampler::default(), 41).unwrap();
    let pm = PathMeasure::markov_from_origin(Arc::new(DiscreteSpace::indexed(2)), rows, 0, 4).unwrap();
    let exact = tv_gamma(&pm, 2.0).unwrap();
    for k in 1..=3 {
        let oracle = exact.gamma(k + 1, 1);
        let (g, se) = (est.gamma[k - 1], est.se[k - 1]);
        assert!((g - oracle).abs() <= 3.0 * se + 1e-12, "k = {k}: {g} ± {se} vs {oracle}");
    }
}

#[test]
fn contractive_affine_model_decays_in_mean_square() {
    let spec = ProcessSpec::Affine {
        drift: Drift::Tanh { matrix: vec![vec![0.5, 0.0], vec![0.0, 0.5]] },
        volatility: Volatility::Scaled { base: 0.5, slope: 0.1, cap: 1.0 },
        innovation: Innovation::Uniform { half_width: 1.0 },
    };
    // Per step, |ΔX'| ≤ (0.5 + 0.1 |ξ|) |ΔX| with |ξ| ≤ √2.
    let lipschitz = 0.5 + 0.1 * 2f64.sqrt();
    let est = estimate_gamma(&spec, 2.0, 15, 10_000, &PairSampler::default(), 42).unwrap();
    for (k, g) in est.gamma.iter().enumerate() {
        assert!(*g <= lipschitz.powi(k as i32 + 1) * (1.0 + 1e-9), "k = {}: {g}", k + 1);
    }
    let fit = decay_rate(&est.gamma, 2, 15).unwrap();
    assert!(fit.rate < 1.0 && fit.rate <= lipschitz + 2.0 * fit.slope_se, "rate {}", fit.rate);
}

#[test]
fn runs_are_reproducible_for_a_seed() {
    let spec = ProcessSpec::Arma {
        matrix: vec![vec![0.6, 0.1], vec![-0.2, 0.4]],
        loading: None,
        innovation: Innovation::Rademacher,
    };
    assert_eq!(simulate(&spec, 50, &[0.0, 0.0], 3).unwrap(), simulate(&spec, 50, &[0.0, 0.0], 3).unwrap());
    assert_ne!(simulate(&spec, 50, &[0.0, 0.0], 3).unwrap(), simulate(&spec, 50, &[0.0, 0.0], 4).unwrap());
    let a = estimate_gamma(&spec, 1.5, 5, 1000, &PairSampler::default(), 9).unwrap();
    let b = estimate_gamma(&spec, 1.5, 5, 1000, &PairSampler::default(), 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn linear_difference_is_deterministic_for_arma() {
    // Shared innovations cancel: γ̂_k = max over pairs |A^k u| / |u|.
    let spec = ProcessSpec::Arma { matrix: vec![vec![0.8]], loading: None, innovation: Innovation::Gaussian { sd: 2.0 } };
    let est = estimate_gamma(&spec, 2.0, 10, 1000, &PairSampler::default(), 1).unwrap();
    for (k, g) in est.gamma.iter().enumerate() {
        assert!((g - 0.8f64.powi(k as i32 + 1)).abs() < 1e-12);
        assert_eq!(est.se[k], 0.0);
    }
}
