mod common;

use common::*;
use flipci::deg::overlap;
use flipci::flip::{effective_score, pvalue_from_stats, Alternative, FlipEnsemble, Statistic};
use flipci::glm::{fit_full, fit_null, Family};
use flipci::inversion::{equispaced, monotonicity_violations, pvalue_curve, Side};
use flipci::report::g9;
use proptest::prelude::*;

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (-100.0..100.0f64, 0.0..50.0f64).prop_map(|(a, w)| (a, a + w))
}

proptest! {
    #[test]
    fn overlap_is_symmetric_and_bounded(a in interval(), b in interval()) {
        let o = overlap(a, b);
        prop_assert_eq!(o, overlap(b, a));
        let o = o.unwrap();
        prop_assert!((0.0..=1.0).contains(&o));
    }

    #[test]
    fn overlap_is_affine_invariant(a in interval(), b in interval(), s in 0.01..100.0f64, t in -1e3..1e3f64) {
        let map = |(l, u): (f64, f64)| (s * l + t, s * u + t);
        let before = overlap(a, b).unwrap();
        let after = overlap(map(a), map(b)).unwrap();
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn overlap_undefined_for_unbounded(a in interval()) {
        prop_assert_eq!(overlap(a, (f64::NEG_INFINITY, 0.0)), None);
    }

    #[test]
    fn pvalues_lie_between_one_over_w_and_one(stats in prop::collection::vec(-5.0..5.0f64, 2..200)) {
        for alt in [Alternative::Greater, Alternative::Less] {
            let p = pvalue_from_stats(&stats, alt).unwrap();
            prop_assert!(p >= 1.0 / stats.len() as f64 && p <= 1.0);
        }
    }

    #[test]
    fn g9_round_trips(x in -1e12..1e12f64) {
        let back: f64 = g9(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 1e-8 * x.abs().max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flipping_every_sign_negates_the_score(seed in 0u64..10_000, n in 8usize..40) {
        let (y, design) = random_instance(Family::Poisson, n, 2, seed);
        let fit = fit_null(Family::Poisson, &y, &design, 0.1).unwrap();
        let mut r = rng(seed);
        let flip: Vec<i8> = (0..n).map(|_| if normal(&mut r) > 0.0 { 1 } else { -1 }).collect();
        let neg: Vec<i8> = flip.iter().map(|f| -f).collect();
        let a = effective_score(&fit, &design, &flip).unwrap();
        let b = effective_score(&fit, &design, &neg).unwrap();
        prop_assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn gaussian_effective_curves_are_monotone(seed in 0u64..10_000, n in 10usize..40) {
        let (y, design) = random_instance(Family::Gaussian, n, 2, seed);
        let fit = fit_full(Family::Gaussian, &y, &design).unwrap();
        let ensemble = FlipEnsemble::generate(n, 200, seed).unwrap();
        let lower = equispaced(fit.beta_hat - 1.0, fit.beta_hat, 25);
        let curve = pvalue_curve(Family::Gaussian, &y, &design, &lower, Side::Lower, &ensemble, Statistic::Effective).unwrap();
        prop_assert_eq!(monotonicity_violations(&curve, Side::Lower), 0);
        let upper = equispaced(fit.beta_hat, fit.beta_hat + 1.0, 25);
        let curve = pvalue_curve(Family::Gaussian, &y, &design, &upper, Side::Upper, &ensemble, Statistic::Effective).unwrap();
        prop_assert_eq!(monotonicity_violations(&curve, Side::Upper), 0);
    }
}
