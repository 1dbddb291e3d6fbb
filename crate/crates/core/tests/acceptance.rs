//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use flipci::baselines::sandwich_covariance;
use flipci::deg::overlap;
use flipci::flip::{effective_score, flip_variance, sign_flip_test, Alternative, FlipEnsemble, Statistic};
use flipci::glm::{fit_full, fit_null, Family};
use flipci::inversion::{
    bisect_equitailed_bound, confint_with_ensemble, equispaced, find_start, initial_epsilon, monotonicity_violations,
    pvalue_curve, CiConfig, IntervalMethod, Side, Start,
};
use flipci::sim::{monotonicity_experiment, nominal_band, run_scenario_with, Scenario, ScenarioId, SimConfig, Summary};
use nalgebra::DVector;
use rand::Rng;

type Outcome = (bool, String);

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("exact monotonicity of effective p-value curves (gaussian)", c01_exact_monotonicity),
        ("exhaustive enumeration oracle, n <= 8", c02_enumeration_oracle),
        ("dense explicit-H oracle for score and variance", c03_dense_oracle),
        ("effective score vanishes at the gaussian MLE", c04_score_at_mle),
        ("coverage under correct specification (lm-correct, N=50)", c05_coverage_lm),
        ("coverage under overdispersion (negbin-as-pois, N=100)", c06_coverage_negbin),
        ("nuisance heteroskedasticity (hetero-nuisance, N=100)", c07_hetero_nuisance),
        ("bisection accuracy against grid oracles", c08_bisection_accuracy),
        ("nominal band for 1000 replications", c09_nominal_band),
        ("overlap metric examples and invariances", c10_overlap),
        ("HC0 sandwich against dense A^-1 B A^-1", c11_sandwich_oracle),
        ("logistic standardized monotonicity counter-example", c12_logistic_monotonicity),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(outcome) => outcome,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {name} [{detail}] ({:.1}s)",
            k + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn c01_exact_monotonicity() -> Outcome {
    let mut violations = 0;
    let mut missing = 0;
    for k in 0..100u64 {
        let n = [10, 25, 50][k as usize % 3];
        let p = [1, 3][(k as usize / 3) % 2];
        let (y, design) = random_instance(Family::Gaussian, n, p, 1000 + k);
        let fit = fit_full(Family::Gaussian, &y, &design).unwrap();
        let grid = equispaced(fit.beta_hat - 4.0 * fit.se_model, fit.beta_hat, 50);
        let ensemble = FlipEnsemble::generate(n, 500, k).unwrap();
        let curve = pvalue_curve(Family::Gaussian, &y, &design, &grid, Side::Lower, &ensemble, Statistic::Effective).unwrap();
        missing += curve.iter().filter(|(_, p)| p.is_none()).count();
        violations += monotonicity_violations(&curve, Side::Lower);
    }
    (violations == 0 && missing == 0, format!("100 curves, {violations} violations, {missing} failed points"))
}

fn c02_enumeration_oracle() -> Outcome {
    let mut mismatches = 0;
    let mut compared = 0;
    for family in [Family::Gaussian, Family::Poisson] {
        for k in 0..20u64 {
            let n = 5 + (k as usize % 4);
            let p = 1 + (k as usize % 2);
            let (y, design) = random_instance(family, n, p, 2000 + k);
            let beta0 = 0.1 * (k as f64 - 10.0) / 10.0;
            let null = dense_null_fit(family, &y, &design, beta0);
            let dense = DenseScore::new(family, &y, &design, &null.mu, null.dispersion);
            let ensemble = FlipEnsemble::exhaustive(n).unwrap();
            for statistic in [Statistic::Effective, Statistic::Standardized] {
                let stat = |f: &[i8]| match statistic {
                    Statistic::Effective => dense.effective(f),
                    Statistic::Standardized => dense.standardized(f),
                };
                let all: Vec<f64> = (0..1u64 << n).map(|m| stat(&signs_from_mask(m, n))).collect();
                let observed = all[0];
                for alternative in [Alternative::Greater, Alternative::Less] {
                    let count = all
                        .iter()
                        .filter(|&&s| match alternative {
                            Alternative::Greater => s >= observed,
                            Alternative::Less => s <= observed,
                        })
                        .count();
                    let brute = count as f64 / all.len() as f64;
                    let lib = sign_flip_test(family, &y, &design, beta0, alternative, &ensemble, statistic).unwrap();
                    compared += 1;
                    if lib.p_value != brute {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    (mismatches == 0, format!("{compared} p-values compared, {mismatches} mismatches"))
}

fn c03_dense_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut r = rng(3);
    for k in 0..50u64 {
        let family = if k % 2 == 0 { Family::Gaussian } else { Family::Poisson };
        let n = 8 + (k as usize % 23);
        let p = 1 + (k as usize % 3);
        let (y, design) = random_instance(family, n, p, 3000 + k);
        let beta0 = 0.3 * normal(&mut r);
        let fit = fit_null(family, &y, &design, beta0).unwrap();
        let dense = DenseScore::new(family, &y, &design, &fit.mu, fit.dispersion);
        for _ in 0..5 {
            let flip: Vec<i8> = (0..n).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect();
            let s = effective_score(&fit, &design, &flip).unwrap();
            let v = flip_variance(&fit, &design, &flip).unwrap();
            worst = worst.max((s - dense.effective(&flip)).abs()).max((v - dense.variance(&flip)).abs());
        }
    }
    (worst < 1e-10, format!("50 instances, max abs error {worst:.2e}"))
}

fn c04_score_at_mle() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..50u64 {
        let n = 10 + (k as usize % 41);
        let p = 1 + (k as usize % 4);
        let (y, design) = random_instance(Family::Gaussian, n, p, 4000 + k);
        let fit = fit_full(Family::Gaussian, &y, &design).unwrap();
        let null = fit_null(Family::Gaussian, &y, &design, fit.beta_hat).unwrap();
        let s = effective_score(&null, &design, &vec![1; n]).unwrap();
        worst = worst.max(s.abs());
    }
    (worst < 1e-9, format!("50 instances, max |S(I)| {worst:.2e}"))
}

fn coverage(summary: &Summary, method: IntervalMethod) -> f64 {
    summary.method(method).coverage
}

fn simulate(id: ScenarioId, n: usize, w: usize) -> Summary {
    let config = SimConfig { n, reps: 500, alpha: 0.05, w, seed: 0, ..SimConfig::default() };
    run_scenario_with(&Scenario::new(id), &config).unwrap().0
}

fn coverage_line(summary: &Summary) -> String {
    summary
        .methods
        .iter()
        .map(|m| format!("{} {:.3}", m.method.name(), m.coverage))
        .collect::<Vec<_>>()
        .join(", ")
}

fn c05_coverage_lm() -> Outcome {
    let s = simulate(ScenarioId::LmCorrect, 50, 500);
    let inside = |m| {
        let c = coverage(&s, m);
        c > 0.925 && c < 0.975
    };
    let ok = inside(IntervalMethod::FlipEquitailed) && inside(IntervalMethod::FlipSymmetric) && inside(IntervalMethod::Wald);
    (ok, coverage_line(&s))
}

fn c06_coverage_negbin() -> Outcome {
    let s = simulate(ScenarioId::NegbinAsPois, 100, 500);
    let ok = coverage(&s, IntervalMethod::FlipEquitailed) >= 0.93
        && coverage(&s, IntervalMethod::FlipSymmetric) >= 0.93
        && coverage(&s, IntervalMethod::Wald) <= 0.90;
    (ok, coverage_line(&s))
}

fn c07_hetero_nuisance() -> Outcome {
    let s = simulate(ScenarioId::HeteroNuisance, 100, 500);
    let ok = coverage(&s, IntervalMethod::FlipEquitailed) >= 0.93
        && coverage(&s, IntervalMethod::Wald) <= 0.92
        && coverage(&s, IntervalMethod::Sandwich) >= 0.92;
    (ok, coverage_line(&s))
}

fn c08_bisection_accuracy() -> Outcome {
    let alpha_half = 0.025;
    let mut r = rng(8);
    let mut synthetic_worst: f64 = 0.0;
    let mut synthetic_ok = true;
    for _ in 0..20 {
        let beta_hat = normal(&mut r);
        let eps = 0.2 + r.random::<f64>();
        let tol = eps / 1024.0;
        for side in [Side::Lower, Side::Upper] {
            let away = -side.toward_estimate();
            let c = beta_hat + away * eps * r.random_range(0.5..9.5);
            let step = eps * r.random_range(0.05..0.5);
            // Monotone staircase in the distance from the estimate, below the
            // threshold exactly beyond `c`.
            let fp = |b: f64| -> f64 {
                let beyond = away * (b - c);
                if beyond > 0.0 {
                    0.02 * (-beyond).exp()
                } else {
                    (alpha_half + 0.1 * (1.0 + (-beyond / step).floor())).min(1.0)
                }
            };
            let mut source = |b: f64| Ok(fp(b));
            let Start::Found(s) = find_start(&mut source, side, beta_hat, eps, alpha_half).unwrap() else {
                synthetic_ok = false;
                continue;
            };
            let bound = bisect_equitailed_bound(&mut source, s, eps, tol, alpha_half, side).unwrap();
            let grid = equispaced(beta_hat - 10.0 * eps, beta_hat + 10.0 * eps, 100_001);
            let oracle = grid
                .iter()
                .copied()
                .filter(|&g| away * (g - beta_hat) >= 0.0 && fp(g) < alpha_half)
                .min_by(|a, b| (a - beta_hat).abs().total_cmp(&(b - beta_hat).abs()))
                .unwrap();
            let err = (bound - oracle).abs();
            synthetic_worst = synthetic_worst.max(err / tol);
            synthetic_ok &= err <= tol && fp(bound) < alpha_half;
        }
    }

    let mut real_worst: f64 = 0.0;
    let mut real_ok = true;
    for k in 0..20u64 {
        let (y, design) = random_instance(Family::Gaussian, 30, 2, 8000 + k);
        let fit = fit_full(Family::Gaussian, &y, &design).unwrap();
        let config = CiConfig { statistic: Statistic::Effective, w: 200, seed: k, ..CiConfig::default() };
        let ensemble = FlipEnsemble::generate(30, 200, k).unwrap();
        let ci = confint_with_ensemble(Family::Gaussian, &y, &design, &config, &ensemble).unwrap();
        let eps = initial_epsilon(fit.beta_hat, fit.se_model, config.alpha()).unwrap();
        let tol = eps * config.tol_fraction;
        for (side, bound) in [(Side::Lower, ci.lower), (Side::Upper, ci.upper)] {
            let away = -side.toward_estimate();
            let grid = equispaced(fit.beta_hat, fit.beta_hat + away * 10.0 * eps, 10_000);
            let spacing = 10.0 * eps / 9_999.0;
            let mut sorted = grid.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let curve = pvalue_curve(Family::Gaussian, &y, &design, &sorted, side, &ensemble, Statistic::Effective).unwrap();
            let oracle = curve
                .iter()
                .filter(|(_, p)| p.is_some_and(|p| p < alpha_half))
                .map(|(b, _)| *b)
                .min_by(|a, b| (a - fit.beta_hat).abs().total_cmp(&(b - fit.beta_hat).abs()));
            match oracle {
                Some(o) => {
                    let err = (bound - o).abs();
                    real_worst = real_worst.max(err / (tol + spacing));
                    real_ok &= err <= tol + spacing;
                }
                None => real_ok &= bound.is_infinite(),
            }
        }
    }
    (
        synthetic_ok && real_ok,
        format!(
            "synthetic max err {synthetic_worst:.3} tol, linear-model max err {real_worst:.3} (tol + spacing)"
        ),
    )
}

fn c09_nominal_band() -> Outcome {
    let (lo, hi) = nominal_band(1000, 0.05).unwrap();
    let ok = format!("{lo:.4}") == "0.9365" && format!("{hi:.4}") == "0.9635";
    (ok, format!("({lo:.6}, {hi:.6})"))
}

fn c10_overlap() -> Outcome {
    let examples = overlap((0.0, 2.0), (0.0, 2.0)) == Some(1.0)
        && overlap((0.0, 1.0), (2.0, 3.0)) == Some(0.0)
        && overlap((0.0, 2.0), (1.0, 3.0)) == Some(0.5);
    let mut r = rng(10);
    let mut asymmetric = 0;
    let mut worst_affine: f64 = 0.0;
    for _ in 0..10_000 {
        let mut interval = || {
            let a = 5.0 * normal(&mut r);
            let b = a + r.random::<f64>() * 3.0;
            (a, b)
        };
        let (a, b) = (interval(), interval());
        let o = overlap(a, b).unwrap();
        if Some(o) != overlap(b, a) {
            asymmetric += 1;
        }
        let s = r.random_range(0.01..100.0);
        let t = 10.0 * normal(&mut r);
        let map = |(l, u): (f64, f64)| (s * l + t, s * u + t);
        let mapped = overlap(map(a), map(b)).unwrap();
        worst_affine = worst_affine.max((mapped - o).abs());
    }
    (
        examples && asymmetric == 0 && worst_affine < 1e-9,
        format!("examples {}, {asymmetric} asymmetric pairs, max affine change {worst_affine:.1e}", if examples { "exact" } else { "wrong" }),
    )
}

fn c11_sandwich_oracle() -> Outcome {
    let x = DVector::from_vec(vec![0.5, -1.2, 0.3, 1.1, -0.4]);
    let z = nalgebra::DMatrix::from_column_slice(5, 1, &[0.2, 0.9, -1.0, 0.4, -0.3]);
    let design = flipci::glm::DesignSplit::with_intercept(x, &z).unwrap();
    let mut worst: f64 = 0.0;
    for (family, y) in [
        (Family::Gaussian, DVector::from_vec(vec![1.3, -0.2, 0.8, 2.1, 0.4])),
        (Family::Poisson, DVector::from_vec(vec![2.0, 0.0, 1.0, 5.0, 1.0])),
    ] {
        let fit = fit_full(family, &y, &design).unwrap();
        let mut coef = DVector::zeros(3);
        coef[0] = fit.beta_hat;
        coef.rows_mut(1, 2).copy_from(fit.gamma_hat());
        let oracle = dense_hc0(family, &y, &design, &coef)[(0, 0)];
        let lib = sandwich_covariance(&fit, &design, &y, false).unwrap().se_beta.powi(2);
        worst = worst.max((lib - oracle).abs());
    }
    (worst < 1e-10, format!("gaussian and poisson n=5, max abs error {worst:.2e}"))
}

fn c12_logistic_monotonicity() -> Outcome {
    let count = |n: usize| {
        let mut monotone = 0;
        let mut non_monotone = 0;
        let mut failed = 0;
        for seed in 0..200 {
            match monotonicity_experiment(n, seed, 50) {
                Ok(c) if c.violations == 0 => monotone += 1,
                Ok(_) => non_monotone += 1,
                Err(_) => failed += 1,
            }
        }
        (monotone, non_monotone, failed)
    };
    let (m20, nm20, f20) = count(20);
    let (m50, nm50, f50) = count(50);
    // Seeds whose full fit fails count against the monotone share.
    let ok = nm20 >= 1 && m50 as f64 >= 0.9 * 200.0;
    (
        ok,
        format!("n=20: {nm20} non-monotone, {m20} monotone, {f20} unfit; n=50: {m50} monotone, {nm50} non-monotone, {f50} unfit"),
    )
}
