//! Closed-form exponents against grid oracles and each other.

use seqoutlier::exponents::{
    brute_force_tuple_oracle, exp_ep_exact_one, exp_est_exact_one, exp_fixed_lnv_t, exp_ld,
    exp_omega_one, lambda_tilde1, Constraint, Functional, SimplexOptimizerSettings, TupleProblem,
};
use seqoutlier::prob::{gjs_variational_oracle, renyi_variational_oracle, Distribution};
use seqoutlier::scoring::Subset;

fn b(p: f64) -> Distribution {
    Distribution::bernoulli(p).unwrap()
}

const PAIRS: [(f64, f64); 5] = [
    (0.2, 0.4),
    (0.3, 0.1),
    (0.25, 0.28),
    (0.6, 0.45),
    (0.05, 0.7),
];

#[test]
fn single_outlier_closed_forms_match_variational_grids() {
    for (pn, pa) in PAIRS {
        for m in 3..=6 {
            let alpha = (m - 2) as f64;
            let ep = exp_ep_exact_one(&b(pn), &b(pa), m).unwrap().value();
            let ep_grid = gjs_variational_oracle(&b(pn), &b(pa), alpha, 1e-5)
                .unwrap()
                .value();
            assert!(
                (ep - ep_grid).abs() < 1e-7,
                "EP M={m} ({pn},{pa}): {ep} vs {ep_grid}"
            );
            // The oracle's order alpha/(1+alpha) is (M-2)/(M-1).
            let est = exp_est_exact_one(&b(pn), &b(pa), m).unwrap().value();
            let est_grid = renyi_variational_oracle(&b(pn), &b(pa), alpha, 1e-5)
                .unwrap()
                .value();
            assert!(
                (est - est_grid).abs() < 1e-7,
                "EST M={m} ({pn},{pa}): {est} vs {est_grid}"
            );
        }
    }
}

#[test]
fn false_reject_exponent_at_zero_threshold_is_the_stopping_time_exponent() {
    let settings = SimplexOptimizerSettings::default();
    for (pn, pa) in PAIRS {
        let omega = exp_omega_one(0.0, &b(pn), &b(pa), 3, &settings)
            .unwrap()
            .value;
        let est = exp_est_exact_one(&b(pn), &b(pa), 3).unwrap().value();
        assert!((omega - est).abs() < 1e-4, "({pn},{pa}): {omega} vs {est}");
    }
}

#[test]
fn false_reject_exponent_matches_brute_force_grid() {
    let settings = SimplexOptimizerSettings::default();
    for (pn, pa) in [(0.2, 0.4), (0.3, 0.1)] {
        let (pn, pa) = (b(pn), b(pa));
        let upper = lambda_tilde1(&pn, &pa, 3, 1, Subset::singleton(0))
            .unwrap()
            .value;
        let lambda = 0.4 * upper;
        let omega = exp_omega_one(lambda, &pn, &pa, 3, &settings).unwrap().value;
        // Minimum over the competing streams of the single-constraint problems.
        let grid = (1..3)
            .map(|c| {
                let problem = TupleProblem {
                    m: 3,
                    nominal: pn.clone(),
                    anomalous: pa.clone(),
                    outliers: Subset::singleton(0),
                    constraints: vec![Constraint::AtMost(
                        Functional::Score(Subset::singleton(c)),
                        lambda,
                    )],
                };
                brute_force_tuple_oracle(&problem, 0.01).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(omega <= grid + 1e-6, "optimiser {omega} above grid {grid}");
        assert!(
            grid - omega < 1e-4,
            "optimiser {omega} far below grid {grid}"
        );
    }
}

#[test]
fn exponent_ordering_chain_holds() {
    let settings = SimplexOptimizerSettings::default();
    for (pn, pa) in PAIRS {
        for (m, t) in [(4, 1), (5, 2)] {
            let fixed = exp_fixed_lnv_t(&b(pn), &b(pa), m, t, &settings)
                .unwrap()
                .value;
            let ld = exp_ld(&b(pn), &b(pa), m, t).unwrap().value.value();
            assert!(
                fixed <= ld + 1e-4,
                "M={m} T={t} ({pn},{pa}): {fixed} > {ld}"
            );
        }
    }
}

#[test]
fn single_outlier_limits_collapse() {
    for (pn, pa) in PAIRS {
        for m in 3..=7 {
            let ld = exp_ld(&b(pn), &b(pa), m, 1).unwrap().value.value();
            let est = exp_est_exact_one(&b(pn), &b(pa), m).unwrap().value();
            assert!((ld - est).abs() < 1e-12);
            let tilde = lambda_tilde1(&b(pn), &b(pa), m, 1, Subset::singleton(0))
                .unwrap()
                .value;
            let ep = exp_ep_exact_one(&b(pn), &b(pa), m).unwrap().value();
            assert!((tilde - ep).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_distributions_give_zero_exponents() {
    let p = b(0.35);
    let settings = SimplexOptimizerSettings::default();
    assert!(exp_ep_exact_one(&p, &p, 4).unwrap().value().abs() < 1e-12);
    assert!(exp_est_exact_one(&p, &p, 4).unwrap().value().abs() < 1e-12);
    assert!(exp_ld(&p, &p, 7, 3).unwrap().value.value().abs() < 1e-12);
    assert!(
        exp_fixed_lnv_t(&p, &p, 5, 2, &settings)
            .unwrap()
            .value
            .abs()
            < 1e-9
    );
}
