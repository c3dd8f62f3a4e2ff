//! Acceptance gate. Run with
//! `cargo test --release -p fairtriage --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use fairtriage::evaluation::{roc_auc, stratified_folds, tune_threshold, ThresholdPolicy};
use fairtriage::explain::{explain_instance, ExplainConfig, Scorer};
use fairtriage::fairness::two_proportion_ztest;
use fairtriage::mitigation::{
    apply_group_thresholds, expected_rates, exponentiated_gradient, fit_threshold_optimizer, fnr_gap, EgConfig,
    PostprocessConfig, PredictMode,
};
use fairtriage::models::{fit, fit_design, objective_and_gradient, BoostingParams, ModelSpec};
use fairtriage::preprocess::encode;
use fairtriage::runner::{run, RunConfig};
use fairtriage::schema::{
    synthesize, Cell, FeatureKind, FeatureSchema, FeatureSpec, GroupBias, SignalEntry, SignalSpec, TargetLevel,
};
use fairtriage::{Matrix, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn within(limit: Duration, elapsed: Duration) -> (bool, String) {
    (
        elapsed < limit,
        format!("{:.2}s of {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()),
    )
}

// Z-test table: recompute |Z| and p from the printed proportions and sizes.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ztest_table.csv");
    let mut rdr = csv::Reader::from_path(path).expect("fixture");
    let mut rows = 0;
    let mut failures = Vec::new();
    let (mut worst_z, mut worst_p) = (0.0f64, 0.0f64);
    for rec in rdr.records() {
        let r = rec.unwrap();
        rows += 1;
        let num = |i: usize| r[i].parse::<f64>().unwrap();
        let (p1, n1, p2, n2, z) = (num(4), num(5) as usize, num(6), num(7) as usize, num(8));
        let t = two_proportion_ztest(p1, n1, p2, n2, 0.05).unwrap();
        let dz = (t.z_abs - z).abs();
        worst_z = worst_z.max(dz);
        let p_ok = if &r[9] == "< 0.001" {
            t.p_value < 0.001
        } else {
            let dp = (t.p_value - num(9)).abs();
            worst_p = worst_p.max(dp);
            dp <= 0.005
        };
        let sig_ok = t.significant == (&r[10] == "true");
        if dz > 0.02 || !p_ok || !sig_ok {
            failures.push(format!("{} {} {} vs {}", &r[0], &r[1], &r[2], &r[3]));
        }
    }
    let (fast, timing) = within(Duration::from_secs(1), start.elapsed());
    (
        failures.is_empty() && rows == 40 && fast,
        format!("{rows} rows, max |dZ| {worst_z:.4}, max |dp| {worst_p:.4}, failures {failures:?}, {timing}"),
    )
}

fn criterion_2() -> Outcome {
    let a = two_proportion_ztest(0.155, 846, 0.191, 577, 0.05).unwrap();
    let b = two_proportion_ztest(0.377, 872, 0.034, 851, 0.05).unwrap();
    let ok = (a.z_abs - 1.75).abs() <= 0.02 && (a.p_value - 0.080).abs() <= 0.005 && (b.z_abs - 19.546).abs() <= 0.02;
    (ok, format!("|Z| {:.4} p {:.4}; |Z| {:.4}", a.z_abs, a.p_value, b.z_abs))
}

fn concordance(y: &[bool], s: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// Labels with both classes present; scores continuous or from a small
/// set so that ties are common.
fn random_instance(rng: &mut ChaCha8Rng, tied: bool) -> (Vec<bool>, Vec<f64>) {
    loop {
        let n = rng.random_range(2..=50);
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
            continue;
        }
        let s = (0..n)
            .map(|_| {
                if tied {
                    rng.random_range(0..5) as f64 / 4.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        return (y, s);
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for k in 0..200 {
        let (y, s) = random_instance(&mut rng, k % 2 == 0);
        worst = worst.max((roc_auc(&y, &s).unwrap() - concordance(&y, &s)).abs());
    }
    let (fast, timing) = within(Duration::from_secs(5), start.elapsed());
    (
        worst <= 1e-9 && fast,
        format!("200 instances, max diff {worst:e}, {timing}"),
    )
}

/// Exhaustive F1 scan, comparing F1 values exactly as fractions; ties go to
/// the lowest threshold.
fn exhaustive_f1_threshold(y: &[bool], s: &[f64]) -> f64 {
    let mut best: Option<(f64, u64, u64)> = None;
    for &t in s {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&yi, &si) in y.iter().zip(s) {
            match (yi, si >= t) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        let (num, den) = (2 * tp, 2 * tp + fp + fn_);
        best = match best {
            None => Some((t, num, den)),
            Some((bt, bn, bd)) => {
                let (lhs, rhs) = (num * bd, bn * den);
                if lhs > rhs || (lhs == rhs && t < bt) {
                    Some((t, num, den))
                } else {
                    Some((bt, bn, bd))
                }
            }
        };
    }
    best.unwrap().0
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for k in 0..100 {
        let (y, s) = random_instance(&mut rng, k % 3 == 0);
        let got = tune_threshold(&y, &s, ThresholdPolicy::F1Max).unwrap();
        if got != exhaustive_f1_threshold(&y, &s) {
            mismatches += 1;
        }
    }
    let (fast, timing) = within(Duration::from_secs(5), start.elapsed());
    (
        mismatches == 0 && fast,
        format!("100 instances, {mismatches} mismatches, {timing}"),
    )
}

/// Weighted penalized log-loss written out with the plain sigmoid.
fn naive_objective(x: &Matrix, y: &[bool], w: &[f64], c: f64, p: &[f64]) -> f64 {
    let d = x.cols();
    let mut loss = 0.0;
    for i in 0..x.rows() {
        let z = p[d] + (0..d).map(|j| x.get(i, j) * p[j]).sum::<f64>();
        let q = 1.0 / (1.0 + (-z).exp());
        loss -= w[i] * if y[i] { q.ln() } else { (1.0 - q).ln() };
    }
    (loss + p[..d].iter().map(|v| v * v).sum::<f64>() / (2.0 * c)) / w.iter().sum::<f64>()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (n, d) = (20, 5);
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
        let c = rng.random_range(0.1..10.0);
        let p: Vec<f64> = (0..=d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = objective_and_gradient(&x, &y, &w, c, &p);
        let h = 1e-5;
        for j in 0..=d {
            let (mut up, mut dn) = (p.clone(), p.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (naive_objective(&x, &y, &w, c, &up) - naive_objective(&x, &y, &w, c, &dn)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / g[j].abs().max(fd.abs()).max(1e-8));
        }
    }
    (worst <= 1e-5, format!("20 problems, max relative error {worst:e}"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    let mut stages = 0;
    let mut halved = 0;
    for k in 0..10 {
        let (n, d) = (rng.random_range(30..80), rng.random_range(2..5));
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<bool> = (0..n)
            .map(|i| rng.random_bool(if x.get(i, 0) > 0.0 { 0.7 } else { 0.3 }))
            .collect();
        // Large steps on half the datasets so the guard has work to do.
        let spec = ModelSpec::GradientBoosting(BoostingParams {
            learning_rate: if k % 2 == 0 { 0.1 } else { 2.5 },
            max_depth: 3,
            n_estimators: 60,
        });
        let m = fit(&spec, &x, &y, None).unwrap();
        let trace = m.loss_trace().unwrap();
        stages += trace.len() - 1;
        violations += trace.windows(2).filter(|w| w[1] > w[0]).count();
        if let fairtriage::models::ModelParams::GradientBoosting(b) = &m.params {
            halved += b.stages.iter().filter(|s| s.scale < spec_rate(&spec)).count();
        }
    }
    (
        violations == 0,
        format!("{stages} stages, {violations} increases, {halved} guarded stages"),
    )
}

fn spec_rate(spec: &ModelSpec) -> f64 {
    match spec {
        ModelSpec::GradientBoosting(p) => p.learning_rate,
        _ => 1.0,
    }
}

fn criterion_7() -> Outcome {
    let schema = FeatureSchema::lcc();
    let n = 14360;
    let data = synthesize(&schema, n, &SignalSpec::default(), 7).unwrap();
    let counts = data.class_counts();
    let props: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let target = [0.3310, 0.5659, 0.1031];
    let mix_ok = props.iter().zip(target).all(|(p, t)| (p - t).abs() <= 0.01);
    let band = |observed: usize, rate: f64| {
        let sd = (rate * (1.0 - rate) / n as f64).sqrt();
        (observed as f64 / n as f64 - rate).abs() <= 3.0 * sd + 1e-12
    };
    let mut inside = 0;
    for (j, f) in schema.features.iter().enumerate() {
        let na = data.rows.iter().filter(|r| matches!(r[j], Cell::Na)).count();
        let missing = data.rows.iter().filter(|r| matches!(r[j], Cell::Missing)).count();
        if band(na, f.na_rate) && band(missing, f.missing_rate) {
            inside += 1;
        }
    }
    let share = inside as f64 / schema.len() as f64;
    (
        mix_ok && share >= 0.95,
        format!(
            "class mix (EH, SOME, NO) = ({:.4}, {:.4}, {:.4}); {inside}/{} features inside 3-sigma bands ({:.1}%)",
            props[0],
            props[1],
            props[2],
            schema.len(),
            100.0 * share
        ),
    )
}

fn hard(v: &[bool]) -> Vec<f64> {
    v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Two informative features, a balanced binary group, and half of the
/// disadvantaged group's positives drawn as if they were negatives.
fn criterion_8() -> Outcome {
    let start = Instant::now();
    let features = vec![
        FeatureSpec::categorical("GENDER", &["male", "female"], &[0.5, 0.5]),
        FeatureSpec::new("S1", FeatureKind::Continuous, 3.0, 1.0),
        FeatureSpec::new("S2", FeatureKind::Continuous, 3.0, 1.0),
    ];
    let schema = FeatureSchema::new(features, [0.331, 0.5659, 0.1031]).unwrap();
    let shift = |f: &str| SignalEntry {
        feature: f.into(),
        level: TargetLevel::EhSupport,
        mean_shift: 1.5,
    };
    let signal = SignalSpec {
        entries: vec![shift("S1"), shift("S2")],
        group_bias: Some(GroupBias {
            feature: "GENDER".into(),
            disadvantaged_level: "female".into(),
            label_noise_rate: 0.5,
            positive_level: TargetLevel::EhSupport,
            flip_to: TargetLevel::SomeAction,
        }),
    };
    let n = 40_000;
    let raw = synthesize(&schema, n, &signal, 5).unwrap();
    let (data, groups) = encode(&raw, TargetLevel::EhSupport).unwrap();
    let g = groups.get("GENDER").unwrap();
    let train_idx: Vec<usize> = (0..n).step_by(2).collect();
    let test_idx: Vec<usize> = (1..n).step_by(2).collect();
    let (train, test) = (data.subset(&train_idx), data.subset(&test_idx));
    let (g_train, g_test) = (g.subset(&train_idx), g.subset(&test_idx));

    let model = fit_design(&ModelSpec::logistic(), &train, None).unwrap();
    let s_train = model.predict_proba(&train.x).unwrap();
    let s_test = model.predict_proba(&test.x).unwrap();
    let base = expected_rates(
        "unmitigated",
        &test.y,
        &hard(&s_test.iter().map(|&s| s >= 0.5).collect::<Vec<_>>()),
        &g_test,
    )
    .unwrap();
    let base_gap = fnr_gap(&base);

    let pp = PostprocessConfig::default();
    let gt = fit_threshold_optimizer(&s_train, &train.y, &g_train, &pp).unwrap();
    let fitted = apply_group_thresholds(&s_train, &g_train, &gt).unwrap();
    let pp_gap = fnr_gap(&expected_rates("postprocessing", &train.y, &hard(&fitted), &g_train).unwrap());
    let pp_bound = 0.02 + 2.0 * pp.grid_step;

    let rc = exponentiated_gradient(&ModelSpec::logistic(), &train, &g_train, &EgConfig::default()).unwrap();
    let q = rc.predict(&test.x, PredictMode::ExpectedScore).unwrap();
    let eg = expected_rates("reductions", &test.y, &q, &g_test).unwrap();
    let eg_gap = fnr_gap(&eg);
    let drop = base[0].accuracy - eg[0].accuracy;

    let (fast, timing) = within(Duration::from_secs(120), start.elapsed());
    (
        base_gap >= 0.2 && pp_gap <= pp_bound && eg_gap <= 0.05 && drop <= 0.05 && fast,
        format!(
            "unmitigated gap {base_gap:.4}; threshold optimizer fit gap {pp_gap:.4} (<= {pp_bound}); \
             EG held-out gap {eg_gap:.4}, accuracy {:.4} -> {:.4} (drop {:.2}pp); {timing}",
            base[0].accuracy,
            eg[0].accuracy,
            100.0 * drop
        ),
    )
}

struct Linear {
    w: Vec<f64>,
    b: f64,
}

impl Scorer for Linear {
    fn n_features(&self) -> usize {
        self.w.len()
    }

    fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok((0..x.rows())
            .map(|i| self.b + x.row(i).iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sign_ok = 0;
    let mut min_fidelity = f64::INFINITY;
    for trial in 0..20 {
        let d = rng.random_range(3..8);
        let w: Vec<f64> = (0..d)
            .map(|_| rng.random_range(0.3..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let scorer = Linear {
            w: w.clone(),
            b: rng.random_range(-1.0..1.0),
        };
        let bg = Matrix::from_vec(200, d, (0..200 * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cfg = ExplainConfig { k: d, n_samples: 1000 };
        let e = explain_instance(&scorer, 0, &x, &bg, &cfg, trial).unwrap();
        if e.contributions.iter().all(|&(j, c)| c.signum() == w[j].signum()) {
            sign_ok += 1;
        }
        min_fidelity = min_fidelity.min(e.fidelity);
    }
    (
        sign_ok == 20 && min_fidelity >= 0.95,
        format!("signs matched in {sign_ok}/20 trials, min weighted R^2 {min_fidelity:.4}"),
    )
}

fn criterion_10() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/paper_shaped.json");
    let base = RunConfig::load(&path).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for k in 0..2 {
        let config = RunConfig {
            output_dir: tmp.path().join(format!("run{k}")),
            ..base.clone()
        };
        let art = run(&config).unwrap();
        let csv: Vec<(String, String)> = art
            .manifest
            .files
            .iter()
            .filter(|f| f.name.ends_with(".csv"))
            .map(|f| (f.name.clone(), f.sha256.clone()))
            .collect();
        digests.push(csv);
    }
    let expected = [
        "metrics.csv",
        "roc.csv",
        "pr_curve.csv",
        "fnr_by_group.csv",
        "ztests.csv",
        "mitigation.csv",
        "explanations.csv",
        "importance_profiles.csv",
    ];
    let present = expected.iter().all(|name| digests[0].iter().any(|(n, _)| n == name));
    let identical = digests[0] == digests[1];

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_spread = 0;
    for rep in 0..30u64 {
        let n = rng.random_range(100..3000);
        let prevalence = rng.random_range(0.05..0.6);
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(prevalence)).collect();
        if y.iter().filter(|&&v| v).count() < 10 || y.iter().filter(|&&v| !v).count() < 10 {
            continue;
        }
        let plan = stratified_folds(&y, 10, rep).unwrap();
        let mut pos = [0usize; 10];
        for (i, &f) in plan.assignments.iter().enumerate() {
            if y[i] {
                pos[f] += 1;
            }
        }
        worst_spread = worst_spread.max(pos.iter().max().unwrap() - pos.iter().min().unwrap());
    }
    (
        present && identical && worst_spread <= 1,
        format!(
            "{} CSV digests, outputs present {present}, identical across runs {identical}, \
             max fold positive-count spread {worst_spread}",
            digests[0].len()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("z-test table", criterion_1),
        ("z-test anchors", criterion_2),
        ("AUC vs concordance", criterion_3),
        ("F1 threshold vs exhaustive scan", criterion_4),
        ("LR gradient vs finite differences", criterion_5),
        ("boosting loss monotone", criterion_6),
        ("synthetic fidelity", criterion_7),
        ("mitigation efficacy", criterion_8),
        ("explanation sanity", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!(
            "criterion {:>2} {:<34} {}  {} [{:.1}s]",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            detail,
            start.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
