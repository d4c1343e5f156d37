use proptest::prelude::*;

use topk_core::bregman::{bregman_div, check_link_property, surrogate_eval, LinkFn, LinkProperty, PotentialFn};
use topk_core::losses::{eval_ent, eval_ent_tr, EntTrVariant};
use topk_core::seed::rng_from_seed;

fn positive(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3..2.0f64, m)
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=8).prop_flat_map(|m| (positive(m), positive(m)))
}

#[test]
fn spec_examples() {
    let sq = PotentialFn::squared_norm();
    let (p, q) = ([1.0, -2.0, 0.5], [0.0, 1.0, 2.0]);
    let half_dist: f64 = p.iter().zip(&q).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
    assert!((bregman_div(&sq, &p, &q).unwrap() - half_dist).abs() < 1e-14);
    assert_eq!(bregman_div(&sq, &p, &p).unwrap(), 0.0);

    let ne = PotentialFn::neg_entropy();
    let v = surrogate_eval(&ne, &LinkFn::softmax(), &[0.0; 3], 0).unwrap();
    assert!((v - 3f64.ln()).abs() < 1e-14);
    // q may touch the boundary, p may not.
    assert!(bregman_div(&ne, &[0.5, 0.5], &[1.0, 0.0]).is_ok());
    assert!(bregman_div(&ne, &[1.0, 0.0], &[0.5, 0.5]).is_err());
}

#[test]
fn links_keep_their_claimed_properties() {
    let mut rng = rng_from_seed(5);
    for m in [3, 5, 8] {
        let soft = check_link_property(&LinkFn::softmax(), m, 10_000, &mut rng).unwrap();
        assert!(soft.passed, "{soft:?}");
        for k in 1..m {
            let r = check_link_property(&LinkFn::truncated_softmax(k), m, 10_000, &mut rng).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }
    let rev = check_link_property(&LinkFn::reversal(LinkProperty::RankPreserving), 4, 100, &mut rng).unwrap();
    assert!(!rev.passed && rev.counterexample.is_some());
}

proptest! {
    #[test]
    fn divergence_nonnegative_and_zero_only_at_equality((p, q) in pair()) {
        for phi in [PotentialFn::squared_norm(), PotentialFn::neg_entropy()] {
            let d = bregman_div(&phi, &p, &q).unwrap();
            prop_assert!(d >= -1e-12);
            prop_assert!(bregman_div(&phi, &p, &p).unwrap().abs() < 1e-12);
            if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-3) {
                prop_assert!(d > 0.0);
            }
        }
    }

    #[test]
    fn potential_gradient_matches_differences(p in (2usize..=8).prop_flat_map(positive)) {
        let h = 1e-6;
        for phi in [PotentialFn::squared_norm(), PotentialFn::neg_entropy()] {
            let g = phi.gradient(&p).unwrap();
            let mut x = p.clone();
            for i in 0..p.len() {
                x[i] = p[i] + h;
                let up = phi.value(&x).unwrap();
                x[i] = p[i] - h;
                let down = phi.value(&x).unwrap();
                x[i] = p[i];
                let fd = (up - down) / (2.0 * h);
                prop_assert!((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0) < 1e-6);
            }
        }
    }

    #[test]
    fn entropy_losses_are_bregman_surrogates(
        (s, y, k) in prop::collection::vec(-5.0..5.0f64, 2..=8).prop_flat_map(|s| {
            let m = s.len();
            (Just(s), 0..m, 1..m)
        })
    ) {
        let ne = PotentialFn::neg_entropy();
        let ent = surrogate_eval(&ne, &LinkFn::softmax(), &s, y).unwrap();
        prop_assert!((ent - eval_ent(&s, y).unwrap()).abs() < 1e-10);
        let tr = surrogate_eval(&ne, &LinkFn::truncated_softmax(k), &s, y).unwrap();
        let want = eval_ent_tr(&s, y, k, EntTrVariant::Two).unwrap().value;
        prop_assert!((tr - want).abs() < 1e-10);
    }
}
