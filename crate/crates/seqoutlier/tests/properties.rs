//! Randomised invariants of divergences, scores and tests.

use proptest::prelude::*;

use seqoutlier::detectors::{run, Generative, HypothesisLabel, Replay, TestConfig};
use seqoutlier::prob::{binary_kl, gjs, kl, renyi, Distribution, Divergence};
use seqoutlier::scoring::{
    g_i, g_li_set, g_set, score, DistributionTuple, ObservationMatrix, Subset,
};

fn dist(k: usize) -> impl Strategy<Value = Distribution> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|w| {
        let total: f64 = w.iter().sum();
        Distribution::new(w.iter().map(|x| x / total).collect()).unwrap()
    })
}

fn pair() -> impl Strategy<Value = (Distribution, Distribution)> {
    (2usize..5).prop_flat_map(|k| (dist(k), dist(k)))
}

fn tuple(m: usize, k: usize) -> impl Strategy<Value = DistributionTuple> {
    prop::collection::vec(dist(k), m).prop_map(|e| DistributionTuple::new(e).unwrap())
}

/// Independent KL: plain loop over the probability vectors.
fn kl_direct(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal((p, q) in pair()) {
        let d = kl(&p, &q).unwrap().value();
        prop_assert!(d >= 0.0);
        prop_assert!((d - kl_direct(p.probs(), q.probs())).abs() < 1e-12);
        prop_assert!(kl(&p, &p).unwrap().value().abs() < 1e-15);
    }

    #[test]
    fn kl_compensation_identity(
        (a, b, r, w) in (2usize..5).prop_flat_map(|k| (dist(k), dist(k), dist(k), 0.05f64..0.95))
    ) {
        // w D(A||R) + (1-w) D(B||R) = w D(A||M) + (1-w) D(B||M) + D(M||R), M = wA + (1-w)B.
        let mix: Vec<f64> = a.probs().iter().zip(b.probs()).map(|(x, y)| w * x + (1.0 - w) * y).collect();
        let m = Distribution::normalized(mix, 1e-9).unwrap();
        let lhs = w * kl(&a, &r).unwrap().value() + (1.0 - w) * kl(&b, &r).unwrap().value();
        let rhs = w * kl(&a, &m).unwrap().value()
            + (1.0 - w) * kl(&b, &m).unwrap().value()
            + kl(&m, &r).unwrap().value();
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn binary_kl_matches_two_symbol_kl(p in 0.01f64..0.99, q in 0.01f64..0.99) {
        let d = kl(&Distribution::bernoulli(p).unwrap(), &Distribution::bernoulli(q).unwrap()).unwrap();
        prop_assert!((binary_kl(p, q).unwrap() - d.value()).abs() < 1e-12);
    }

    #[test]
    fn gjs_grows_with_alpha((p, q) in pair(), a in 0.05f64..5.0, step in 0.01f64..3.0) {
        let lo = gjs(&p, &q, a).unwrap().value();
        let hi = gjs(&p, &q, a + step).unwrap().value();
        prop_assert!(lo >= 0.0);
        prop_assert!(hi >= lo - 1e-12, "{} < {}", hi, lo);
    }

    #[test]
    fn renyi_grows_with_order((p, q) in pair(), a in 0.0f64..0.95, step in 0.0f64..0.5) {
        let b = (a + step).min(0.99);
        let lo = renyi(&p, &q, a).unwrap().value();
        let hi = renyi(&p, &q, b).unwrap().value();
        prop_assert!(lo >= -1e-15);
        prop_assert!(hi >= lo - 1e-12, "order {}: {} < order {}: {}", b, hi, a, lo);
        prop_assert!(hi <= kl(&p, &q).unwrap().value() + 1e-12);
    }

    #[test]
    fn singleton_set_score_equals_single_stream_score(t in tuple(5, 3), i in 0usize..5) {
        let a = g_i(&t, i).unwrap();
        let b = g_set(&t, Subset::singleton(i)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn nominal_spread_never_exceeds_full_score(
        t in tuple(6, 3),
        members in prop::sample::subsequence((0..6).collect::<Vec<usize>>(), 1..=2),
    ) {
        let b = Subset::from_indices(&members).unwrap();
        let li = g_li_set(&t, b).unwrap();
        let full = g_set(&t, b).unwrap();
        prop_assert!(li >= 0.0);
        prop_assert!(li <= full + 1e-15);
    }

    #[test]
    fn score_is_invariant_under_stream_permutation(
        rows in prop::collection::vec(prop::collection::vec(0usize..3, 12), 5),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        i in 0usize..5,
    ) {
        let obs = ObservationMatrix::from_rows(rows.clone(), 3).unwrap();
        let permuted_rows: Vec<Vec<usize>> = perm.iter().map(|&p| rows[p].clone()).collect();
        let permuted = ObservationMatrix::from_rows(permuted_rows, 3).unwrap();
        // Stream i of the original is stream perm^-1(i) after permuting.
        let j = perm.iter().position(|&p| p == i).unwrap();
        let a = score(&obs, Subset::singleton(i)).unwrap();
        let b = score(&permuted, Subset::singleton(j)).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn replay_reproduces_the_generative_run(seed in any::<u64>(), pn in 0.1f64..0.9, pa in 0.1f64..0.9) {
        let (pn, pa) = (Distribution::bernoulli(pn).unwrap(), Distribution::bernoulli(pa).unwrap());
        let cfg = TestConfig::est_exact_one(4, 2, 20).with_k_max(400);
        let live = run(&mut Generative::from_truth(&pn, &pa, 4, Subset::singleton(1), seed).unwrap(), &cfg).unwrap();
        let obs = Generative::from_truth(&pn, &pa, 4, Subset::singleton(1), seed).unwrap().take_matrix(400);
        let replayed = run(&mut Replay::new(&obs), &cfg).unwrap();
        prop_assert_eq!(live, replayed);
    }

    #[test]
    fn atmost_decisions_respect_both_thresholds(
        seed in any::<u64>(),
        pn in 0.1f64..0.9,
        pa in 0.1f64..0.9,
        truth in 0usize..5,
        l2 in 0.005f64..0.05,
        gap in 0.005f64..0.05,
    ) {
        let (pn, pa) = (Distribution::bernoulli(pn).unwrap(), Distribution::bernoulli(pa).unwrap());
        let outliers = if truth == 4 { Subset::EMPTY } else { Subset::singleton(truth) };
        let l1 = l2 + gap;
        let cfg = TestConfig::est_atmost_one(4, 2, 30, l1, l2).with_k_max(3000);
        let v = run(&mut Generative::from_truth(&pn, &pa, 4, outliers, seed).unwrap(), &cfg).unwrap();
        prop_assert!(v.tau >= 29);
        if v.truncated {
            return Ok(());
        }
        match v.label {
            HypothesisLabel::Outliers(b) => {
                prop_assert!(v.score_of(b).unwrap() <= l2);
                for c in v.final_scores.iter().filter(|c| c.candidate != b) {
                    prop_assert!(c.score > l1, "{} has {} <= {}", c.candidate, c.score, l1);
                }
            }
            HypothesisLabel::Null => {
                prop_assert!(v.final_scores.iter().all(|c| c.score <= l2));
            }
            HypothesisLabel::Undecided => prop_assert!(false, "sequential tests always decide"),
        }
    }
}

#[test]
fn divergence_infinite_marker_orders_above_finite_values() {
    let p = Distribution::point_mass(0, 2).unwrap();
    let q = Distribution::point_mass(1, 2).unwrap();
    assert_eq!(kl(&p, &q).unwrap(), Divergence::Infinite);
    assert!(Divergence::Infinite > Divergence::Finite(1e300));
}
