mod common;

use std::sync::Arc;

use common::*;
use weakdep::measures::{kl_divergence, kl_path, DiscreteMeasure, DiscreteSpace, Metric, PathMeasure};
use weakdep::rng::trial_rng;
use weakdep::transport::lp::solve_transport;
use weakdep::transport::{dual_form_check, glue_markov, wasserstein, weak_transport_cost, SolverConfig};

#[test]
fn network_simplex_matches_dense_simplex() {
    use rand::Rng;
    for t in 0..200u64 {
        let mut rng = trial_rng(11, t);
        let m = rng.gen_range(1..7);
        let n = rng.gen_range(1..7);
        let space_m = Arc::new(DiscreteSpace::indexed(m));
        let space_n = Arc::new(DiscreteSpace::indexed(n));
        let p = positive_measure(&space_m, &mut rng);
        let q = continuous_wrt(&positive_measure(&space_n, &mut rng), &mut rng);
        let cost: Vec<f64> = (0..m * n).map(|_| rng.gen_range(0.0..3.0)).collect();
        let fast = solve_transport(p.weights(), q.weights(), &cost).unwrap().value;
        let slow = dense_transport(p.weights(), q.weights(), &cost);
        assert!((fast - slow).abs() < 1e-9, "trial {t}: {fast} vs {slow}");
    }
}

/// `W~_2` with Hamming cost between two laws on two points, by minimizing
/// `sqrt((q0 - t)²/q0 + (p0 - t)²/q1)` over the coupling mass `t` on the
/// diagonal point `(0, 0)` with a ternary search.
fn two_point_weak_cost(p0: f64, q0: f64) -> f64 {
    let q1 = 1.0 - q0;
    let obj = |t: f64| {
        let a = if q0 > 0.0 { (q0 - t).powi(2) / q0 } else { 0.0 };
        let b = if q1 > 0.0 { (p0 - t).powi(2) / q1 } else { 0.0 };
        (a + b).sqrt()
    };
    let (mut lo, mut hi) = ((p0 + q0 - 1.0).max(0.0), p0.min(q0));
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if obj(m1) <= obj(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    obj(0.5 * (lo + hi))
}

#[test]
fn two_point_cost_matches_brute_force() {
    use rand::Rng;
    let cfg = SolverConfig::default();
    let space = Arc::new(DiscreteSpace::indexed(2));
    for t in 0..200u64 {
        let mut rng = trial_rng(21, t);
        let p0 = rng.gen_range(0.02..0.98);
        let q0 = if t % 5 == 0 { 1.0 } else { rng.gen_range(0.0..1.0) };
        let p = normalized(space.clone(), vec![p0, 1.0 - p0]);
        let q = normalized(space.clone(), vec![q0, 1.0 - q0]);
        let v = weak_transport_cost(&single(&p), &single(&q), 2.0, &Metric::Hamming, false, &cfg).unwrap();
        let brute = two_point_weak_cost(p.weights()[0], q.weights()[0]);
        assert!(v.lower <= brute + 1e-7 && brute <= v.upper + 1e-7, "trial {t}: [{}, {}] vs {brute}", v.lower, v.upper);
        assert!(v.gap() <= 1e-4);
    }
}

#[test]
fn holder_domination_and_p1_collapse() {
    use rand::Rng;
    let cfg = SolverConfig::default();
    for t in 0..200u64 {
        let mut rng = trial_rng(22, t);
        let k = rng.gen_range(2..=4);
        let space = Arc::new(DiscreteSpace::indexed(k));
        let p = positive_measure(&space, &mut rng);
        let q = continuous_wrt(&positive_measure(&space, &mut rng), &mut rng);
        for exp in [1.0, 1.5, 2.0] {
            let weak = weak_transport_cost(&single(&p), &single(&q), exp, &Metric::Hamming, false, &cfg).unwrap();
            let w = wasserstein(&p, &q, exp, &Metric::Hamming).unwrap().value;
            assert!(weak.upper <= w + 1e-6, "trial {t}, p = {exp}: {} > {w}", weak.upper);
            if exp == 1.0 {
                assert_eq!(weak.lower, weak.upper);
                assert!((weak.upper - w).abs() <= 1e-12, "trial {t}: {} vs {w}", weak.upper);
            }
        }
    }
}

#[test]
fn relative_entropy_chain_rule() {
    use rand::Rng;
    let space = Arc::new(DiscreteSpace::indexed(3));
    for t in 0..100u64 {
        let mut rng = trial_rng(23, t);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let raw: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() + 0.01).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        };
        let (pj, qj) = (draw(&mut rng), draw(&mut rng));
        let p = PathMeasure::from_joint(space.clone(), 2, pj).unwrap();
        let q = PathMeasure::from_joint(space.clone(), 2, qj).unwrap();
        let kl = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * (x / y).ln()).sum() };
        let (p1, q1) = (p.marginal(1).unwrap(), q.marginal(1).unwrap());
        let mut chain = kl(&q1, &p1);
        for x in 0..3 {
            chain += q1[x] * kl(&q.next_step(&[x]).unwrap(), &p.next_step(&[x]).unwrap());
        }
        let direct = kl_path(&q, &p).unwrap();
        assert!((direct - chain).abs() < 1e-12, "trial {t}: {direct} vs {chain}");
    }
}

#[test]
fn dual_form_grid_on_two_points() {
    let p = DiscreteMeasure::uniform(Arc::new(DiscreteSpace::indexed(2)));
    let f = [0.0, 1.0];
    for i in 1..=50 {
        let lambda = 0.2 * i as f64;
        for a0 in 0..=15 {
            for a1 in 0..=15 {
                let alpha = [0.2 * a0 as f64, 0.2 * a1 as f64];
                for inverted in [false, true] {
                    let r = dual_form_check(&p, 1.0, 2.0, &Metric::Hamming, &f, &alpha, lambda, inverted).unwrap();
                    assert!(r.verdict.is_pass(), "λ = {lambda}, α = {alpha:?}, inverted {inverted}: {:?}", r.left);
                }
            }
        }
    }
}

#[test]
fn glue_rejects_mismatched_middle_margin() {
    let mut rng = trial_rng(24, 0);
    let (x, y, z) = (random_two_step(2, &mut rng), random_two_step(2, &mut rng), random_two_step(2, &mut rng));
    let mut w = random_two_step(2, &mut rng);
    w.0 = vec![0.9, 0.1];
    let pi_xy = random_markov_coupling(&x, &y, &mut rng);
    let pi_wz = random_markov_coupling(&w, &z, &mut rng);
    assert!(glue_markov(&pi_xy, &pi_wz, 2).is_err());
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

    #[test]
    fn weak_cost_interval_is_ordered_and_bounded(seed in proptest::prelude::any::<u64>()) {
        use rand::Rng;
        let mut rng = trial_rng(seed, 0);
        let k = rng.gen_range(2..=4);
        let space = Arc::new(DiscreteSpace::indexed(k));
        let p = positive_measure(&space, &mut rng);
        let q = continuous_wrt(&p, &mut rng);
        let v = weak_transport_cost(&single(&p), &single(&q), 2.0, &Metric::Hamming, false, &SolverConfig::default()).unwrap();
        proptest::prop_assert!(v.lower <= v.upper + 1e-12);
        proptest::prop_assert!(v.lower >= -1e-12);
        // Hamming cost never exceeds the total-variation coupling bound of 1.
        proptest::prop_assert!(v.upper <= 1.0 + 1e-9);
        let rhs = (2.0 * kl_divergence(&q, &p).unwrap()).sqrt();
        proptest::prop_assert!(v.upper <= rhs + 1e-6);
    }
}
