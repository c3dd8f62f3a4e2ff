//! End-to-end experiment runner.
//!
//! Stages run in a fixed order: load, preprocess, split, cv, fit, audit,
//! mitigate, explain, report. A failing stage stops the run; the manifest
//! still records the stages that completed.
//!
//! Run configuration JSON (every section except `data` is optional):
//!
//! ```text
//! {
//!   "data": {"synthetic": {"schema": null, "n": 14360, "signal": {...}}}
//!        or {"csv": {"path": "data.csv", "schema": null}},
//!   "target_level": "EH SUPPORT",
//!   "drop_threshold": 0.3,
//!   "test_fraction": 0.3,
//!   "models": [{"kind": "logistic_regression"}, {"kind": "gradient_boosting"}],
//!   "cv": {"k": 10, "repetitions": 30, "base_seed": 0},
//!   "threshold_policy": {"policy": "f1_max"},
//!   "audit": {"features": ["GENDER", "IDACI_CLASS"], "alpha": 0.05,
//!             "min_category_fraction": 0.01},
//!   "mitigation": {"methods": ["postprocessing", "reductions"], "feature": "GENDER",
//!                  "postprocessing": {"grid_step": 0.01, "gap_tolerance": 0.02},
//!                  "eg": {"epsilon": 0.02, "iterations": 50, "eta0": 2.0, "bound": 100}},
//!   "explain": {"enabled": true, "k": 10, "n_samples": 1000, "instances": 20},
//!   "output_dir": "out"
//! }
//! ```
//!
//! A `null` schema means the bundled one. Every random draw is seeded from
//! `cv.base_seed` as `base_seed + stage * 1_000_000 + repetition`, with stage
//! 0 = cv, 1 = synthesis, 2 = train/test split, 3 = mitigation, 4 = explain.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::evaluation::{
    auc, confusion, cross_validate, optimal_point, pr_threshold_scan, predict_at, roc_points, tune_threshold, CvConfig,
    MetricSummary, ThresholdPolicy,
};
use crate::explain::{aggregate, explain_many, write_explanations_csv, write_profiles_csv, Outcome};
use crate::fairness::{audit, AuditConfig};
use crate::fmt::f64_str;
use crate::mitigation::{
    apply_group_thresholds, expected_rates, exponentiated_gradient, fit_threshold_optimizer, fnr_gap,
    write_mitigation_csv, EgConfig, PostprocessConfig, PredictMode, RateRow,
};
use crate::models::{fit_design, FittedModel, ModelSpec};
use crate::preprocess::{drop_sparse_records, encode, DesignMatrix, GroupAssignments, DEFAULT_DROP_THRESHOLD};
use crate::schema::{load_schema, synthesize, FeatureSchema, RawDataset, SignalSpec, TargetLevel};

pub const STAGE_CV: u64 = 0;
pub const STAGE_SYNTH: u64 = 1;
pub const STAGE_SPLIT: u64 = 2;
pub const STAGE_MITIGATION: u64 = 3;
pub const STAGE_EXPLAIN: u64 = 4;

/// Seed for `stage` and `repetition` under the counter scheme.
pub fn stage_seed(base: u64, stage: u64, repetition: u64) -> u64 {
    base.wrapping_add(stage * 1_000_000).wrapping_add(repetition)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        schema: Option<PathBuf>,
        n: usize,
        #[serde(default)]
        signal: SignalSpec,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationMethod {
    Postprocessing,
    Reductions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationConfig {
    pub methods: Vec<MitigationMethod>,
    pub feature: String,
    pub postprocessing: PostprocessConfig,
    pub eg: EgConfig,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            methods: vec![],
            feature: "GENDER".into(),
            postprocessing: PostprocessConfig::default(),
            eg: EgConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub enabled: bool,
    pub k: usize,
    pub n_samples: usize,
    /// Number of test records explained, taken in test-set order.
    pub instances: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            enabled: false,
            k: 10,
            n_samples: 1000,
            instances: 20,
        }
    }
}

fn default_target() -> TargetLevel {
    TargetLevel::EhSupport
}

fn default_drop() -> f64 {
    DEFAULT_DROP_THRESHOLD
}

fn default_test_fraction() -> f64 {
    0.3
}

fn default_models() -> Vec<ModelSpec> {
    vec![ModelSpec::logistic()]
}

fn default_output() -> PathBuf {
    PathBuf::from("fairtriage-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default = "default_target")]
    pub target_level: TargetLevel,
    #[serde(default = "default_drop")]
    pub drop_threshold: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_models")]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub threshold_policy: ThresholdPolicy,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub mitigation: MitigationConfig,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse("run config", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Checks that need no data: ranges, non-empty lists, existing paths.
    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Synthetic { schema, n, .. } => {
                if *n == 0 {
                    return Err(config_err("data.synthetic.n", "must be at least 1"));
                }
                if let Some(p) = schema {
                    if !p.exists() {
                        return Err(config_err(
                            "data.synthetic.schema",
                            format!("{} does not exist", p.display()),
                        ));
                    }
                }
            }
            DataSource::Csv { path, schema } => {
                if !path.exists() {
                    return Err(config_err(
                        "data.csv.path",
                        format!("{} does not exist", path.display()),
                    ));
                }
                if let Some(p) = schema {
                    if !p.exists() {
                        return Err(config_err("data.csv.schema", format!("{} does not exist", p.display())));
                    }
                }
            }
        }
        if !(self.drop_threshold > 0.0 && self.drop_threshold <= 1.0) {
            return Err(config_err("drop_threshold", "must lie in (0, 1]"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(config_err("test_fraction", "must lie in (0, 1)"));
        }
        if self.models.is_empty() {
            return Err(config_err("models", "at least one model is required"));
        }
        for (i, m) in self.models.iter().enumerate() {
            m.validate()
                .map_err(|e| config_err(&format!("models[{i}]"), e.to_string()))?;
        }
        if self.cv.k < 2 {
            return Err(config_err("cv.k", "must be at least 2"));
        }
        if self.cv.repetitions == 0 {
            return Err(config_err("cv.repetitions", "must be at least 1"));
        }
        if let ThresholdPolicy::Fixed { threshold } = self.threshold_policy {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(config_err("threshold_policy.threshold", "must lie in [0, 1]"));
            }
        }
        if !(self.audit.alpha > 0.0 && self.audit.alpha < 1.0) {
            return Err(config_err("audit.alpha", "must lie in (0, 1)"));
        }
        self.mitigation
            .eg
            .validate()
            .map_err(|e| config_err("mitigation.eg", e.to_string()))?;
        let step = self.mitigation.postprocessing.grid_step;
        if !(step > 0.0 && step <= 0.5) {
            return Err(config_err(
                "mitigation.postprocessing.grid_step",
                "must lie in (0, 0.5]",
            ));
        }
        if self.explain.enabled {
            if self.explain.k == 0 {
                return Err(config_err("explain.k", "must be at least 1"));
            }
            if self.explain.n_samples < 50 {
                return Err(config_err("explain.n_samples", "must be at least 50"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub base_seed: u64,
    pub synthesis: u64,
    pub split: u64,
    pub cv_first: u64,
    pub cv_last: u64,
    pub mitigation: u64,
    pub explain_first: u64,
}

impl Seeds {
    fn new(base: u64, repetitions: usize) -> Self {
        Self {
            base_seed: base,
            synthesis: stage_seed(base, STAGE_SYNTH, 0),
            split: stage_seed(base, STAGE_SPLIT, 0),
            cv_first: stage_seed(base, STAGE_CV, 0),
            cv_last: stage_seed(base, STAGE_CV, repetitions.saturating_sub(1) as u64),
            mitigation: stage_seed(base, STAGE_MITIGATION, 0),
            explain_first: stage_seed(base, STAGE_EXPLAIN, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub completed_stages: Vec<String>,
    pub seeds: Seeds,
    pub config: RunConfig,
    pub files: Vec<FileDigest>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub threshold: f64,
    pub auc: f64,
    pub recall: f64,
    pub precision: f64,
    /// Youden-optimal (FPR, TPR).
    pub optimal_roc_point: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub kind: String,
    pub cv_auc: StatSummary,
    pub cv_recall: StatSummary,
    pub cv_precision: StatSummary,
    pub test: TestMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub feature: String,
    pub biased: bool,
    pub significant_pairs: usize,
    pub tested_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationSummary {
    pub variant: String,
    pub feature: String,
    pub fnr_gap: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub target_level: TargetLevel,
    pub records_loaded: usize,
    pub records_kept: usize,
    pub train_records: usize,
    pub test_records: usize,
    pub encoded_columns: usize,
    pub models: Vec<ModelSummary>,
    pub audit: Vec<AuditSummary>,
    pub mitigation: Vec<MitigationSummary>,
    pub explained_instances: usize,
    pub mean_fidelity: Option<f64>,
}

impl Summary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }
}

/// Result of a successful run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    pub summary: Summary,
}

/// Stratified split: each class shuffled by `seed`, the first
/// round(fraction * class size) members go to the test set. Both index
/// lists come back sorted.
pub fn stratified_split(y: &[bool], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        members.shuffle(&mut rng);
        let cut = (test_fraction * members.len() as f64).round() as usize;
        test.extend_from_slice(&members[..cut]);
        train.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

struct Writer {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl Writer {
    fn emit(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileDigest {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn emit_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.emit(name, buf)
    }
}

struct Stages {
    completed: Vec<String>,
}

impl Stages {
    fn run<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let out = f().map_err(|e| Error::Stage {
            stage: name,
            source: Box::new(e),
        })?;
        self.completed.push(name.to_string());
        Ok(out)
    }
}

fn resolve_schema(path: &Option<PathBuf>) -> Result<FeatureSchema> {
    match path {
        Some(p) => load_schema(p),
        None => Ok(FeatureSchema::lcc()),
    }
}

/// Execute the configured pipeline and write the report directory.
pub fn run(config: &RunConfig) -> Result<RunArtifacts> {
    let start = Instant::now();
    config.validate()?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut writer = Writer {
        dir: dir.clone(),
        files: vec![],
    };
    let mut stages = Stages { completed: vec![] };
    let result = run_stages(config, &mut writer, &mut stages);
    let (status, failed_stage, error) = match &result {
        Ok(_) => ("ok".to_string(), None, None),
        Err(e) => {
            let stage = match e {
                Error::Stage { stage, .. } => Some(stage.to_string()),
                _ => None,
            };
            ("failed".to_string(), stage, Some(e.to_string()))
        }
    };
    let manifest = Manifest {
        tool: "fairtriage".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        status,
        failed_stage,
        error,
        completed_stages: stages.completed,
        seeds: Seeds::new(config.cv.base_seed, config.cv.repetitions),
        config: config.clone(),
        files: writer.files.clone(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let summary = result?;
    Ok(RunArtifacts {
        output_dir: dir,
        manifest,
        summary,
    })
}

struct Prepared {
    loaded: usize,
    kept: usize,
    data: DesignMatrix,
    groups: GroupAssignments,
}

fn load_and_prepare(config: &RunConfig, stages: &mut Stages) -> Result<Prepared> {
    let base = config.cv.base_seed;
    let raw: RawDataset = stages.run("load", || match &config.data {
        DataSource::Synthetic { schema, n, signal } => {
            let schema = resolve_schema(schema)?;
            synthesize(&schema, *n, signal, stage_seed(base, STAGE_SYNTH, 0))
        }
        DataSource::Csv { path, schema } => {
            let schema = resolve_schema(schema)?;
            RawDataset::read_csv_file(&schema, path)
        }
    })?;
    stages.run("preprocess", || {
        let kept = drop_sparse_records(&raw, config.drop_threshold)?;
        let (data, groups) = encode(&kept, config.target_level)?;
        Ok(Prepared {
            loaded: raw.len(),
            kept: kept.len(),
            data,
            groups,
        })
    })
}

fn write_metrics_csv(rows: &[(String, String, f64, f64, usize)], out: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "metric", "mean", "std", "n_values"])?;
    for (model, metric, mean, std, n) in rows {
        w.write_record([
            model.clone(),
            metric.clone(),
            f64_str(*mean),
            f64_str(*std),
            n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Unique display names: the short name, suffixed with the position when
/// the same learner appears twice.
fn model_names(models: &[ModelSpec]) -> Vec<String> {
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let dup = models.iter().filter(|o| o.short_name() == m.short_name()).count() > 1;
            if dup {
                format!("{}#{}", m.short_name(), i + 1)
            } else {
                m.short_name().to_string()
            }
        })
        .collect()
}

fn run_stages(config: &RunConfig, writer: &mut Writer, stages: &mut Stages) -> Result<Summary> {
    let base = config.cv.base_seed;
    let prep = load_and_prepare(config, stages)?;
    let (train_idx, test_idx) = stages.run("split", || {
        let (tr, te) = stratified_split(&prep.data.y, config.test_fraction, stage_seed(base, STAGE_SPLIT, 0));
        if tr.is_empty() || te.is_empty() {
            return Err(Error::EmptyDataset("train/test split left one side empty".into()));
        }
        Ok((tr, te))
    })?;
    let train = prep.data.subset(&train_idx);
    let test = prep.data.subset(&test_idx);
    let groups_train = prep.groups.subset(&train_idx);
    let groups_test = prep.groups.subset(&test_idx);
    let names = model_names(&config.models);

    let cv_cfg = CvConfig {
        base_seed: stage_seed(base, STAGE_CV, 0),
        ..config.cv
    };
    let summaries: Vec<MetricSummary> = stages.run("cv", || {
        config
            .models
            .iter()
            .map(|m| cross_validate(m, &train, &cv_cfg, config.threshold_policy))
            .collect()
    })?;

    struct Fitted {
        model: FittedModel,
        threshold: f64,
        test_scores: Vec<f64>,
    }
    let fitted: Vec<Fitted> = stages.run("fit", || {
        config
            .models
            .iter()
            .map(|m| {
                let model = fit_design(m, &train, None)?;
                let threshold = tune_threshold(&train.y, &model.predict_proba(&train.x)?, config.threshold_policy)?;
                let test_scores = model.predict_proba(&test.x)?;
                Ok(Fitted {
                    model,
                    threshold,
                    test_scores,
                })
            })
            .collect()
    })?;

    let model_summaries = stages.run("evaluate", || {
        let mut metric_rows = Vec::new();
        let mut roc_buf = Vec::new();
        let mut pr_buf = Vec::new();
        let mut out = Vec::new();
        {
            let mut roc_w = csv::Writer::from_writer(&mut roc_buf);
            let mut pr_w = csv::Writer::from_writer(&mut pr_buf);
            roc_w.write_record(["model", "fpr", "tpr", "threshold"])?;
            pr_w.write_record(["model", "threshold", "precision", "recall", "f1"])?;
            for ((name, s), f) in names.iter().zip(&summaries).zip(&fitted) {
                for (metric, stat) in [
                    ("cv_auc", &s.auc),
                    ("cv_recall", &s.recall),
                    ("cv_precision", &s.precision),
                ] {
                    metric_rows.push((name.clone(), metric.to_string(), stat.mean, stat.std, stat.values.len()));
                }
                let curve = roc_points(&test.y, &f.test_scores)?;
                let c = confusion(&test.y, &predict_at(&f.test_scores, f.threshold))?;
                let test_auc = auc(&curve);
                let (fpr, tpr, _) = optimal_point(&curve);
                for (metric, v) in [
                    ("test_auc", test_auc),
                    ("test_recall", c.recall()),
                    ("test_precision", c.precision()),
                    ("threshold", f.threshold),
                ] {
                    metric_rows.push((name.clone(), metric.to_string(), v, 0.0, 1));
                }
                for p in &curve.points {
                    roc_w.write_record([name.clone(), f64_str(p.x), f64_str(p.y), f64_str(p.threshold)])?;
                }
                for p in pr_threshold_scan(&test.y, &f.test_scores)? {
                    pr_w.write_record([
                        name.clone(),
                        f64_str(p.threshold),
                        f64_str(p.precision),
                        f64_str(p.recall),
                        f64_str(p.f1),
                    ])?;
                }
                let stat = |m: &crate::evaluation::MetricStat| StatSummary {
                    mean: m.mean,
                    std: m.std,
                };
                out.push(ModelSummary {
                    name: name.clone(),
                    kind: f.model.spec.kind().to_string(),
                    cv_auc: stat(&s.auc),
                    cv_recall: stat(&s.recall),
                    cv_precision: stat(&s.precision),
                    test: TestMetrics {
                        threshold: f.threshold,
                        auc: test_auc,
                        recall: c.recall(),
                        precision: c.precision(),
                        optimal_roc_point: (fpr, tpr),
                    },
                });
            }
            roc_w.flush().map_err(|e| Error::io("<csv writer>", e))?;
            pr_w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        }
        writer.emit_with("metrics.csv", |b| write_metrics_csv(&metric_rows, b))?;
        writer.emit("roc.csv", roc_buf)?;
        writer.emit("pr_curve.csv", pr_buf)?;
        Ok(out)
    })?;

    // Audit, mitigation and explanations concern the first model.
    let primary = &fitted[0];
    let test_pred = predict_at(&primary.test_scores, primary.threshold);
    let audit_summary = stages.run("audit", || {
        let report = audit(&test.y, &test_pred, &groups_test, &config.audit)?;
        writer.emit_with("fnr_by_group.csv", |b| report.write_fnr_csv(b))?;
        writer.emit_with("ztests.csv", |b| report.write_ztests_csv(b))?;
        Ok(report
            .features
            .iter()
            .map(|f| AuditSummary {
                feature: f.stats.feature.clone(),
                biased: f.biased,
                significant_pairs: f.tests.iter().filter(|t| t.result.significant).count(),
                tested_pairs: f.tests.len(),
            })
            .collect::<Vec<_>>())
    })?;

    let mitigation_summary = stages.run("mitigate", || {
        let mc = &config.mitigation;
        let mut rows: Vec<RateRow> = Vec::new();
        let mut out = Vec::new();
        if !mc.methods.is_empty() {
            let col_train = groups_train.get(&mc.feature)?;
            let col_test = groups_test.get(&mc.feature)?;
            let as_f64 = |v: &[bool]| v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
            let mut add = |variant: &str, q: &[f64], rows: &mut Vec<RateRow>| -> Result<()> {
                let r = expected_rates(variant, &test.y, q, col_test)?;
                out.push(MitigationSummary {
                    variant: variant.to_string(),
                    feature: mc.feature.clone(),
                    fnr_gap: fnr_gap(&r),
                    accuracy: r[0].accuracy,
                });
                rows.extend(r);
                Ok(())
            };
            add("unmitigated", &as_f64(&test_pred), &mut rows)?;
            for method in &mc.methods {
                match method {
                    MitigationMethod::Postprocessing => {
                        let train_scores = primary.model.predict_proba(&train.x)?;
                        let gt = fit_threshold_optimizer(&train_scores, &train.y, col_train, &mc.postprocessing)?;
                        let pred = apply_group_thresholds(&primary.test_scores, col_test, &gt)?;
                        add("postprocessing", &as_f64(&pred), &mut rows)?;
                    }
                    MitigationMethod::Reductions => {
                        let rc = exponentiated_gradient(&primary.model.spec, &train, col_train, &mc.eg)?;
                        let q = rc.predict(&test.x, PredictMode::ExpectedScore)?;
                        add("reductions", &q, &mut rows)?;
                    }
                }
            }
        }
        writer.emit_with("mitigation.csv", |b| write_mitigation_csv(&rows, b))?;
        Ok(out)
    })?;

    let (explained, mean_fidelity) = stages.run("explain", || {
        let ex = &config.explain;
        let mut explanations = Vec::new();
        let mut outcomes = Vec::new();
        if ex.enabled {
            let instances: Vec<usize> = (0..test.n().min(ex.instances)).collect();
            let cfg = crate::explain::ExplainConfig {
                k: ex.k,
                n_samples: ex.n_samples,
            };
            explanations = explain_many(
                &primary.model,
                &test.x,
                &instances,
                &train.x,
                &cfg,
                stage_seed(base, STAGE_EXPLAIN, 0),
            )?;
            outcomes = instances
                .iter()
                .map(|&i| Outcome::of(test.y[i], test_pred[i]))
                .collect();
        }
        let profiles = aggregate(&explanations, &outcomes)?;
        let names = &test.column_names;
        writer.emit_with("explanations.csv", |b| write_explanations_csv(&explanations, names, b))?;
        writer.emit_with("importance_profiles.csv", |b| write_profiles_csv(&profiles, names, b))?;
        let mean = (!explanations.is_empty())
            .then(|| explanations.iter().map(|e| e.fidelity).sum::<f64>() / explanations.len() as f64);
        Ok((explanations.len(), mean))
    })?;

    stages.run("report", || {
        let summary = Summary {
            target_level: config.target_level,
            records_loaded: prep.loaded,
            records_kept: prep.kept,
            train_records: train.n(),
            test_records: test.n(),
            encoded_columns: prep.data.d(),
            models: model_summaries,
            audit: audit_summary,
            mitigation: mitigation_summary,
            explained_instances: explained,
            mean_fidelity,
        };
        writer.emit("summary.json", serde_json::to_string_pretty(&summary)?.into_bytes())?;
        Ok(summary)
    })
}

/// Per-record scores and decisions, the hand-off between `evaluate` and
/// `audit` / `mitigate` on the command line. Columns: y, score, prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub y: Vec<bool>,
    pub scores: Vec<f64>,
    pub predictions: Vec<bool>,
}

impl Predictions {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        check_len("scores", self.y.len(), self.scores.len())?;
        check_len("predictions", self.y.len(), self.predictions.len())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["y", "score", "prediction"])?;
        for i in 0..self.y.len() {
            w.write_record([
                u8::from(self.y[i]).to_string(),
                f64_str(self.scores[i]),
                u8::from(self.predictions[i]).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != ["y", "score", "prediction"] {
            return Err(Error::parse("predictions", "header must be y,score,prediction"));
        }
        let flag = |s: &str, line: usize| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(Error::parse(
                "predictions",
                format!("line {line}: expected 0 or 1, got {s:?}"),
            )),
        };
        let mut out = Predictions {
            y: vec![],
            scores: vec![],
            predictions: vec![],
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            out.y.push(flag(&rec[0], line)?);
            let score: f64 = rec[1]
                .parse()
                .map_err(|_| Error::parse("predictions", format!("line {line}: bad score {:?}", &rec[1])))?;
            out.scores.push(score);
            out.predictions.push(flag(&rec[2], line)?);
        }
        Ok(out)
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f)).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }
}

/// Human-readable table of test performance per model.
pub fn render_report(summary: &Summary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Target: {}  records: {} loaded, {} kept, {} train / {} test, {} encoded columns",
        summary.target_level,
        summary.records_loaded,
        summary.records_kept,
        summary.train_records,
        summary.test_records,
        summary.encoded_columns
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<12} {:>8} {:>8} {:>10} {:>10}  Optimal ROC point (FPR, TPR)",
        "Classifier", "AUC", "Recall", "Precision", "Threshold"
    );
    for m in &summary.models {
        let (fpr, tpr) = m.test.optimal_roc_point;
        let _ = writeln!(
            s,
            "{:<12} {:>8.4} {:>8.4} {:>10.4} {:>10.4}  ({:.2}, {:.2})",
            m.name, m.test.auc, m.test.recall, m.test.precision, m.test.threshold, fpr, tpr
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Cross-validation (mean ± std)");
    for m in &summary.models {
        let _ = writeln!(
            s,
            "{:<12} AUC {:.4} ± {:.4}  recall {:.4} ± {:.4}  precision {:.4} ± {:.4}",
            m.name,
            m.cv_auc.mean,
            m.cv_auc.std,
            m.cv_recall.mean,
            m.cv_recall.std,
            m.cv_precision.mean,
            m.cv_precision.std
        );
    }
    if !summary.audit.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "FNR audit");
        for a in &summary.audit {
            let _ = writeln!(
                s,
                "{:<16} {}  ({} of {} pairs significant)",
                a.feature,
                if a.biased { "biased" } else { "no evidence of bias" },
                a.significant_pairs,
                a.tested_pairs
            );
        }
    }
    if !summary.mitigation.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Mitigation ({})", summary.mitigation[0].feature);
        for m in &summary.mitigation {
            let _ = writeln!(
                s,
                "{:<16} FNR gap {:.4}  accuracy {:.4}",
                m.variant, m.fnr_gap, m.accuracy
            );
        }
    }
    if let Some(f) = summary.mean_fidelity {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "Explanations: {} instances, mean fidelity {:.4}",
            summary.explained_instances, f
        );
    }
    s
}
