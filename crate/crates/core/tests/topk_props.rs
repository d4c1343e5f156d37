use proptest::prelude::*;

use topk_core::risk::topk_risk;
use topk_core::topk::{is_top_k_preserving, order_stat, top_k_error, top_k_select};
use topk_core::{CondDist, TieBreakPolicy};

const POLICIES: [TieBreakPolicy; 4] = [
    TieBreakPolicy::LowestIndex,
    TieBreakPolicy::HighestIndex,
    TieBreakPolicy::WorstCaseForLabel,
    TieBreakPolicy::BestCaseForLabel,
];

/// Small integers so ties are common.
fn tied_scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-3i32..=3).prop_map(f64::from), 2..=max_len)
}

fn scores_with_k(max_len: usize) -> impl Strategy<Value = (Vec<f64>, usize, usize)> {
    tied_scores(max_len).prop_flat_map(|s| {
        let m = s.len();
        (Just(s), 1..m, 0..m)
    })
}

/// Literal reading of the definition: every entry above `x_[k+1]` stays above
/// `y_[k+1]`, every entry below `x_[k]` stays below `y_[k]`.
fn preserving_oracle(y: &[f64], x: &[f64], k: usize) -> bool {
    let kth = |v: &[f64], j: usize| {
        let mut w = v.to_vec();
        w.sort_by(|a, b| b.partial_cmp(a).unwrap());
        w[j - 1]
    };
    (0..x.len()).all(|m| {
        let above = x[m] > kth(x, k + 1);
        let below = x[m] < kth(x, k);
        (!above || y[m] > kth(y, k + 1)) && (!below || y[m] < kth(y, k))
    })
}

fn distinct_simplex(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1u32..1000, m).prop_filter_map("distinct entries", |w| {
        let mut sorted = w.clone();
        sorted.sort_unstable();
        sorted.dedup();
        (sorted.len() == w.len()).then(|| {
            let z: u32 = w.iter().sum();
            w.iter().map(|&v| f64::from(v) / f64::from(z)).collect()
        })
    })
}

#[test]
fn spec_examples() {
    let v = [1.0, 4.0, 4.0, 2.0];
    assert_eq!(order_stat(&v, 1).unwrap(), 4.0);
    assert_eq!(order_stat(&v, 4).unwrap(), 1.0);
    assert_eq!(order_stat(&[7.0, 7.0], 2).unwrap(), 7.0);
    assert!(order_stat(&v, 0).is_err() && order_stat(&v, 5).is_err());

    for p in POLICIES {
        let set = top_k_select(&[0.0, 1.0, 1.0], 2, p, Some(0)).unwrap();
        assert_eq!(set.indices(), &[1, 2]);
    }
    let set = top_k_select(&[1.0, 1.0, 1.0], 2, TieBreakPolicy::WorstCaseForLabel, Some(0)).unwrap();
    assert_eq!(set.indices(), &[1, 2]);
    let set = top_k_select(&[1.0, 1.0, 1.0], 2, TieBreakPolicy::BestCaseForLabel, Some(0)).unwrap();
    assert!(set.contains(0));
    assert!(top_k_select(&[1.0, 0.0], 1, TieBreakPolicy::WorstCaseForLabel, None).is_err());

    let wc = TieBreakPolicy::WorstCaseForLabel;
    assert_eq!(top_k_error(&[0.0, 1.0, 1.0], 0, 2, wc).unwrap(), 1);
    assert_eq!(top_k_error(&[1.0, 0.0, 0.0], 0, 2, wc).unwrap(), 0);
    assert_eq!(top_k_error(&[1.0, 1.0, 0.0], 0, 1, wc).unwrap(), 1);
    assert_eq!(top_k_error(&[1.0, 1.0, 0.0], 0, 1, TieBreakPolicy::BestCaseForLabel).unwrap(), 0);

    assert!(is_top_k_preserving(&[4.0, 3.0, 2.0, 1.0], &[4.0, 2.0, 2.0, 1.0], 2).unwrap());
    assert!(!is_top_k_preserving(&[4.0, 2.0, 2.0, 1.0], &[4.0, 3.0, 2.0, 1.0], 2).unwrap());
    assert!(is_top_k_preserving(&[1.0, 2.0], &[1.0, 2.0, 3.0], 1).is_err());
}

#[test]
fn preserving_transitive_exhaustive() {
    // Every triple over {0, 1, 2}^M for M = 3, 4.
    for m in 3..=4u32 {
        let all: Vec<Vec<f64>> = (0..3usize.pow(m))
            .map(|code| (0..m).map(|i| (code / 3usize.pow(i) % 3) as f64).collect())
            .collect();
        for k in 1..m as usize {
            let rel: Vec<Vec<bool>> = all
                .iter()
                .map(|a| all.iter().map(|b| is_top_k_preserving(a, b, k).unwrap()).collect())
                .collect();
            for a in 0..all.len() {
                for b in (0..all.len()).filter(|&b| rel[a][b]) {
                    for c in (0..all.len()).filter(|&c| rel[b][c]) {
                        assert!(rel[a][c], "{:?} {:?} {:?} k={k}", all[a], all[b], all[c]);
                    }
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn order_stat_non_increasing(v in tied_scores(8)) {
        for j in 1..v.len() {
            prop_assert!(order_stat(&v, j).unwrap() >= order_stat(&v, j + 1).unwrap());
        }
    }

    #[test]
    fn selection_is_valid_for_every_policy((s, k, y) in scores_with_k(8)) {
        for p in POLICIES {
            let set = top_k_select(&s, k, p, Some(y)).unwrap();
            prop_assert_eq!(set.len(), k);
            prop_assert!(set.indices().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(set.indices().iter().all(|&i| i < s.len()));
            let inside = set.indices().iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min);
            let outside = (0..s.len())
                .filter(|i| !set.contains(*i))
                .map(|i| s[i])
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(inside >= outside);
        }
    }

    #[test]
    fn worst_case_dominates_other_policies((s, k, y) in scores_with_k(8)) {
        let worst = top_k_error(&s, y, k, TieBreakPolicy::WorstCaseForLabel).unwrap();
        for p in POLICIES {
            prop_assert!(worst >= top_k_error(&s, y, k, p).unwrap());
        }
        prop_assert!(top_k_error(&s, y, k, TieBreakPolicy::BestCaseForLabel).unwrap() <= worst);
    }

    #[test]
    fn preserving_matches_definition(
        (x, y, k) in (2usize..=6).prop_flat_map(|m| {
            let v = || prop::collection::vec((-2i32..=2).prop_map(f64::from), m);
            (v(), v(), 1..m)
        })
    ) {
        prop_assert_eq!(is_top_k_preserving(&y, &x, k).unwrap(), preserving_oracle(&y, &x, k));
    }

    #[test]
    fn preserving_reflexive((x, k, _) in scores_with_k(8)) {
        prop_assert!(is_top_k_preserving(&x, &x, k).unwrap());
    }

    #[test]
    fn preserving_transitive(
        m in 2usize..=6,
        seed in prop::collection::vec(-2i32..=2, 18),
        k_raw in 1usize..6,
    ) {
        let k = 1 + (k_raw - 1) % (m - 1);
        let v = |o: usize| -> Vec<f64> { seed[o..o + m].iter().map(|&t| f64::from(t)).collect() };
        let (a, b, c) = (v(0), v(6), v(12));
        if is_top_k_preserving(&a, &b, k).unwrap() && is_top_k_preserving(&b, &c, k).unwrap() {
            prop_assert!(is_top_k_preserving(&a, &c, k).unwrap());
        }
    }

    #[test]
    fn preserving_iff_bayes_risk(
        (eta, s, k) in (3usize..=6).prop_flat_map(|m| {
            (distinct_simplex(m), prop::collection::vec((-2i32..=2).prop_map(f64::from), m), 1..m)
        })
    ) {
        let eta = CondDist::renormalized(eta, 1e-9).unwrap();
        let mut sorted = eta.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let bayes = 1.0 - sorted[..k].iter().sum::<f64>();
        // Worst-case risk by brute force over labels.
        let risk: f64 = (0..s.len())
            .map(|y| eta[y] * f64::from(top_k_error(&s, y, k, TieBreakPolicy::WorstCaseForLabel).unwrap()))
            .sum();
        prop_assert!((risk - topk_risk(&s, &eta, k).unwrap()).abs() < 1e-12);
        let attains = (risk - bayes).abs() < 1e-12;
        prop_assert_eq!(is_top_k_preserving(&s, &eta, k).unwrap(), attains);
    }
}
