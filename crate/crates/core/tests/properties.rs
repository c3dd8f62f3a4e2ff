use proptest::prelude::*;

use fairtriage::evaluation::{confusion, predict_at, roc_auc, stratified_folds};
use fairtriage::explain::{explain_instance, ExplainConfig};
use fairtriage::fairness::{normal_cdf, two_proportion_ztest};
use fairtriage::mitigation::{apply_group_thresholds, exponentiated_gradient, EgConfig, GroupThresholds};
use fairtriage::models::{fit, ModelSpec};
use fairtriage::preprocess::{DesignMatrix, GroupColumn};
use fairtriage::schema::{synthesize, FeatureKind, FeatureSchema, FeatureSpec, SignalSpec};
use fairtriage::Matrix;

fn labels_and_scores() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
    (2usize..60)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(0u8..20, n),
            )
        })
        .prop_filter("both classes", |(y, _)| y.iter().any(|&v| v) && y.iter().any(|&v| !v))
        .prop_map(|(y, s)| (y, s.into_iter().map(|v| v as f64 / 19.0).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_invariant_under_increasing_transform((y, s) in labels_and_scores()) {
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        prop_assert!((roc_auc(&y, &s).unwrap() - roc_auc(&y, &t).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn recall_never_rises_with_threshold((y, s) in labels_and_scores()) {
        let mut last = f64::INFINITY;
        for k in 0..=40 {
            let r = confusion(&y, &predict_at(&s, k as f64 / 40.0)).unwrap().recall();
            prop_assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn ztest_is_symmetric(p1 in 0.0f64..1.0, n1 in 1usize..5000, p2 in 0.0f64..1.0, n2 in 1usize..5000) {
        let a = two_proportion_ztest(p1, n1, p2, n2, 0.05).unwrap();
        let b = two_proportion_ztest(p2, n2, p1, n1, 0.05).unwrap();
        prop_assert_eq!(a.z_abs, b.z_abs);
        prop_assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn ztest_monotone_in_difference(p in 0.05f64..0.5, d1 in 0.001f64..0.2, extra in 0.001f64..0.2, n in 20usize..3000) {
        let near = two_proportion_ztest(p, n, p + d1, n, 0.05).unwrap();
        let far = two_proportion_ztest(p, n, p + d1 + extra, n, 0.05).unwrap();
        prop_assert!(far.z_abs > near.z_abs);
        prop_assert!(far.p_value <= near.p_value);
        if far.p_value > 0.0 {
            prop_assert!(far.p_value < near.p_value);
        }
    }

    #[test]
    fn folds_balance_positives(y in prop::collection::vec(any::<bool>(), 40..400), k in 2usize..11, seed: u64) {
        let pos = y.iter().filter(|&&v| v).count();
        prop_assume!(pos >= k && y.len() - pos >= k);
        let plan = stratified_folds(&y, k, seed).unwrap();
        let mut counts = vec![0usize; k];
        for (i, &f) in plan.assignments.iter().enumerate() {
            if y[i] {
                counts[f] += 1;
            }
        }
        prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn equal_group_thresholds_match_global(scores in prop::collection::vec(0.0f64..1.0, 1..80), t in 0.0f64..1.0) {
        let labels: Vec<String> = (0..scores.len()).map(|i| if i % 3 == 0 { "a" } else { "b" }.to_string()).collect();
        let col = GroupColumn::from_labels("G", &labels, &["a", "b"]);
        let gt = GroupThresholds {
            feature: "G".into(),
            thresholds: vec![("a".into(), t), ("b".into(), t)],
            target_rate: 0.0,
            achieved_gap: 0.0,
            grid_step: 0.01,
        };
        prop_assert_eq!(apply_group_thresholds(&scores, &col, &gt).unwrap(), predict_at(&scores, t));
    }
}

#[test]
fn normal_cdf_matches_erfc_reference() {
    let mut worst = 0.0f64;
    for i in 0..=16_000 {
        let x = -8.0 + i as f64 * 1e-3;
        let reference = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        worst = worst.max((normal_cdf(x) - reference).abs());
    }
    assert!(worst <= 1e-7, "max deviation {worst:e}");
}

fn small_schema() -> FeatureSchema {
    FeatureSchema::new(
        vec![
            FeatureSpec::new("A", FeatureKind::Fraction, 0.4, 0.2).with_rates(0.05, 0.1),
            FeatureSpec::new("B", FeatureKind::Count, 2.0, 1.5),
            FeatureSpec::categorical("GENDER", &["male", "female"], &[0.5, 0.5]),
        ],
        [0.33, 0.57, 0.10],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthesis_is_byte_identical(seed: u64, n in 1usize..200) {
        let schema = small_schema();
        let mut a = Vec::new();
        let mut b = Vec::new();
        synthesize(&schema, n, &SignalSpec::default(), seed).unwrap().write_csv(&mut a).unwrap();
        synthesize(&schema, n, &SignalSpec::default(), seed).unwrap().write_csv(&mut b).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn explanations_scale_with_scores(seed in 0u64..1000, c in 0.1f64..10.0) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let n = 120;
        let x = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).unwrap();
        let y: Vec<bool> = (0..n).map(|i| x.get(i, 0) + 0.3 * x.get(i, 1) > 0.0).collect();
        let model = fit(&ModelSpec::logistic(), &x, &y, None).unwrap();
        let scaled = Scaled { inner: model.clone(), c };
        let cfg = ExplainConfig { k: 3, n_samples: 200 };
        let a = explain_instance(&model, 0, x.row(0), &x, &cfg, seed).unwrap();
        let b = explain_instance(&scaled, 0, x.row(0), &x, &cfg, seed).unwrap();
        for (&(ja, ca), &(jb, cb)) in a.contributions.iter().zip(&b.contributions) {
            prop_assert_eq!(ja, jb);
            prop_assert!((c * ca - cb).abs() <= 1e-9 * (1.0 + cb.abs()));
        }
    }
}

struct Scaled {
    inner: fairtriage::models::FittedModel,
    c: f64,
}

impl fairtriage::explain::Scorer for Scaled {
    fn n_features(&self) -> usize {
        self.inner.n_features
    }

    fn score(&self, x: &Matrix) -> fairtriage::Result<Vec<f64>> {
        Ok(self.inner.predict_proba(x)?.into_iter().map(|v| v * self.c).collect())
    }
}

/// Small problem with a group whose positives look like negatives.
fn biased_problem(seed: u64, n: usize) -> (DesignMatrix, GroupColumn) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let g = rng.random_bool(0.5);
        let pos = rng.random_bool(0.4);
        let shift = if pos && !(g && rng.random_bool(0.5)) { 1.5 } else { 0.0 };
        rows.push(vec![
            rng.random::<f64>() + shift,
            rng.random::<f64>() + shift,
            if g { 1.0 } else { 0.0 },
        ]);
        y.push(pos);
        labels.push(if g { "b" } else { "a" }.to_string());
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let data = DesignMatrix::new(vec!["u".into(), "v".into(), "g".into()], x, y).unwrap();
    (data, GroupColumn::from_labels("G", &labels, &["a", "b"]))
}

#[test]
fn duals_stay_feasible() {
    for seed in 0..4 {
        let (data, groups) = biased_problem(seed, 400);
        let cfg = EgConfig {
            iterations: 20,
            ..EgConfig::default()
        };
        let rc = exponentiated_gradient(&ModelSpec::logistic(), &data, &groups, &cfg).unwrap();
        for lambda in &rc.duals_history {
            assert!(lambda.iter().all(|&v| v >= 0.0));
            assert!(lambda.iter().sum::<f64>() <= cfg.bound * (1.0 + 1e-12));
        }
    }
}

// Fails as stated: the averaged play's violation oscillates before settling
// (seed 0: 0.280, 0.012, 0.052, 0.090, 0, ...). Exponentiated gradient only
// guarantees convergence of the average, not a monotone path.
#[test]
#[ignore = "averaged-play violation is not monotone under exponentiated gradient"]
fn averaged_play_violation_never_rises() {
    for seed in 0..6 {
        let (data, groups) = biased_problem(seed, 400);
        let cfg = EgConfig {
            iterations: 30,
            nu: Some(0.0),
            ..EgConfig::default()
        };
        let rc = exponentiated_gradient(&ModelSpec::logistic(), &data, &groups, &cfg).unwrap();
        let h = &rc.violation_history;
        for w in h.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "seed {seed}: {h:?}");
        }
    }
}

#[test]
fn averaged_play_violation_settles() {
    for seed in 0..6 {
        let (data, groups) = biased_problem(seed, 400);
        let cfg = EgConfig {
            iterations: 30,
            nu: Some(0.0),
            ..EgConfig::default()
        };
        let rc = exponentiated_gradient(&ModelSpec::logistic(), &data, &groups, &cfg).unwrap();
        let h = &rc.violation_history;
        let last = *h.last().unwrap();
        assert!(last <= h[0], "seed {seed}: {h:?}");
        assert!(last <= 0.01, "seed {seed}: {h:?}");
    }
}
