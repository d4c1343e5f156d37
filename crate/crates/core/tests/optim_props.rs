use proptest::prelude::*;

use topk_core::losses::{LossFamily, LossSpec};
use topk_core::optim::{
    finite_diff_grad, mean_loss, minimize_scores, top_k_accuracy, train_linear, train_linear_multistart,
    DescentConfig, Init, LinearModel, Optimizer, StepSchedule, TrainConfig,
};
use topk_core::synth::{gen_exp3, gen_linear_sep_dataset, Dataset, DatasetMeta, Exp3Params};
use topk_core::TieBreakPolicy;

fn dataset(m: usize, d: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec((prop::collection::vec(-2.0..2.0f64, d), 0..m), 1..30).prop_map(move |rows| {
        let inputs = rows.iter().flat_map(|(x, _)| x.clone()).collect();
        let labels = rows.iter().map(|&(_, y)| y).collect();
        let meta = DatasetMeta {
            generator: "test".into(),
            params: serde_json::json!({}),
            seed: None,
            num_classes: m,
        };
        Dataset::new(inputs, d, labels, meta).unwrap()
    })
}

fn model(m: usize, d: usize) -> impl Strategy<Value = LinearModel> {
    prop::collection::vec(prop::collection::vec((-4i32..=4).prop_map(|v| f64::from(v) / 2.0), d), m)
        .prop_map(|rows| LinearModel::from_rows(&rows).unwrap())
}

fn small_mixture() -> Dataset {
    let p = Exp3Params {
        train_per_class: 6,
        test_per_class: 1,
        ..Exp3Params::with_means(3)
    };
    gen_exp3(&p, 4).unwrap().0
}

#[test]
fn minimize_scores_on_a_quadratic() {
    let target = [1.0, -2.0, 0.5];
    let obj = |s: &[f64], g: &mut [f64]| {
        let mut v = 0.0;
        for i in 0..s.len() {
            g[i] = s[i] - target[i];
            v += 0.5 * g[i] * g[i];
        }
        v
    };
    let cfg = DescentConfig {
        schedule: StepSchedule::Constant(0.5),
        max_iter: 200,
        ..DescentConfig::default()
    };
    let out = minimize_scores(obj, &[0.0; 3], &cfg).unwrap();
    assert!(out.converged);
    for (a, b) in out.best.iter().zip(&target) {
        assert!((a - b).abs() < 1e-6);
    }
    assert_eq!(out.trace.len(), out.iterations + 1);

    let blowup = |s: &[f64], g: &mut [f64]| {
        g[0] = -s[0].exp();
        s[0].exp()
    };
    let cfg = DescentConfig {
        schedule: StepSchedule::Constant(10.0),
        max_iter: 100,
        ..DescentConfig::default()
    };
    assert!(minimize_scores(blowup, &[1.0], &cfg).is_err());
}

#[test]
fn multistart_keeps_the_best_restart() {
    let data = gen_linear_sep_dataset();
    let cfg = TrainConfig {
        epochs: 100,
        fit_bias: false,
        init: Init::Uniform { bound: 0.5 },
        seed: 9,
        ..TrainConfig::default()
    };
    let loss = LossSpec::psi5(2);
    let best = train_linear_multistart(&loss, &data, &cfg, 6).unwrap();
    for r in 0..6u64 {
        let one = train_linear(
            &loss,
            &data,
            &TrainConfig {
                seed: topk_core::seed::derive_seed(9, r),
                ..cfg
            },
        )
        .unwrap();
        assert!(best.final_loss <= one.final_loss);
    }
    assert!(train_linear_multistart(&loss, &data, &cfg, 0).is_err());
}

#[test]
fn training_lowers_the_loss() {
    let data = small_mixture();
    for loss in [LossSpec::ent(), LossSpec::psi1(2), LossSpec::psi5(2), LossSpec::ent_tr1(2)] {
        let start = mean_loss(&loss, &LinearModel::zeros(data.num_classes(), data.dim(), true), &data).unwrap();
        for optimizer in [Optimizer::Adam, Optimizer::SubgradDescent] {
            let cfg = TrainConfig {
                optimizer,
                epochs: 200,
                ..TrainConfig::default()
            };
            let rep = train_linear(&loss, &data, &cfg).unwrap();
            assert!(rep.final_loss < start, "{} {optimizer:?}", loss.family);
            assert!((rep.final_loss - mean_loss(&loss, &rep.model, &data).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn training_rejects_bad_configs() {
    let data = small_mixture();
    let bad = [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { epochs: 0, ..TrainConfig::default() },
    ];
    for cfg in bad {
        assert!(train_linear(&LossSpec::ent(), &data, &cfg).is_err());
    }
    assert!(train_linear(&LossSpec::psi1(data.num_classes()), &data, &TrainConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn best_so_far_is_non_increasing(
        eta in prop::collection::vec(0.01..1.0f64, 3..=6),
        lr in 0.05..2.0f64,
    ) {
        // Convex objective: expected Ent loss under η.
        let z: f64 = eta.iter().sum();
        let eta: Vec<f64> = eta.iter().map(|v| v / z).collect();
        let obj = |s: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for (y, &w) in eta.iter().enumerate() {
                let (f, sg) = LossSpec::ent().eval_with_subgrad(s, y).unwrap();
                v += w * f;
                g.iter_mut().zip(&sg).for_each(|(a, b)| *a += w * b);
            }
            v
        };
        let cfg = DescentConfig { schedule: StepSchedule::InvSqrt(lr), max_iter: 300, ..DescentConfig::default() };
        let out = minimize_scores(obj, &vec![0.0; eta.len()], &cfg).unwrap();
        let bsf = out.best_so_far();
        prop_assert!(bsf.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*bsf.last().unwrap(), out.best_value);
        prop_assert!(out.trace.iter().all(|&v| v >= out.best_value));
    }

    #[test]
    fn training_is_bitwise_deterministic(
        seed in any::<u64>(),
        family in prop::sample::select(LossFamily::ALL.to_vec()),
        adam in any::<bool>(),
    ) {
        let data = gen_linear_sep_dataset();
        let cfg = TrainConfig {
            optimizer: if adam { Optimizer::Adam } else { Optimizer::SubgradDescent },
            epochs: 30,
            seed,
            init: Init::Uniform { bound: 0.5 },
            ..TrainConfig::default()
        };
        let loss = LossSpec::new(family, if family.uses_k() { 2 } else { 1 });
        let a = train_linear(&loss, &data, &cfg).unwrap();
        let b = train_linear(&loss, &data, &cfg).unwrap();
        prop_assert_eq!(a.model, b.model);
        prop_assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
    }

    #[test]
    fn accuracy_non_decreasing_in_k(
        (w, data) in (3usize..=6, 1usize..=3).prop_flat_map(|(m, d)| (model(m, d), dataset(m, d))),
    ) {
        for policy in [TieBreakPolicy::WorstCaseForLabel, TieBreakPolicy::BestCaseForLabel, TieBreakPolicy::LowestIndex] {
            let accs: Vec<f64> = (1..w.num_classes).map(|k| top_k_accuracy(&w, &data, k, policy).unwrap()).collect();
            prop_assert!(accs.windows(2).all(|p| p[0] <= p[1]), "{accs:?}");
            prop_assert!(accs.iter().all(|a| (0.0..=1.0).contains(a)));
        }
    }

    #[test]
    fn mean_loss_is_the_average(
        (w, data) in (3usize..=5, 1usize..=3).prop_flat_map(|(m, d)| (model(m, d), dataset(m, d))),
    ) {
        let loss = LossSpec::psi3(1);
        let direct: f64 = data.iter().map(|(x, y)| loss.eval(&w.scores(x), y).unwrap()).sum::<f64>() / data.len() as f64;
        prop_assert!((mean_loss(&loss, &w, &data).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn finite_differences_match_smooth_gradients(
        s in prop::collection::vec(-3.0..3.0f64, 3..=8),
        y_raw in 0usize..8,
    ) {
        let y = y_raw % s.len();
        for loss in [LossSpec::ent(), LossSpec::cd()] {
            let g = loss.subgrad(&s, y).unwrap();
            let fd = finite_diff_grad(|v| loss.eval(v, y).unwrap(), &s, 1e-6).unwrap();
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() / a.abs().max(b.abs()).max(1.0) < 1e-6);
            }
        }
        prop_assert!(finite_diff_grad(|v| v[0], &s, 0.0).is_err());
    }
}
