use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairtriage::evaluation::{
    cross_validate, pr_threshold_scan, predict_at, roc_points, tune_threshold, CvConfig, ThresholdPolicy,
};
use fairtriage::explain::{
    aggregate, explain_many, write_explanations_csv, write_profiles_csv, ExplainConfig, Outcome,
};
use fairtriage::fairness::{audit, AuditConfig};
use fairtriage::fmt::f64_str;
use fairtriage::mitigation::{
    apply_group_thresholds, expected_rates, exponentiated_gradient, fit_threshold_optimizer, write_mitigation_csv,
    EgConfig, PostprocessConfig, PredictMode,
};
use fairtriage::models::{fit_design, FittedModel, ModelSpec};
use fairtriage::preprocess::{drop_sparse_records, encode, DesignMatrix, GroupAssignments, DEFAULT_DROP_THRESHOLD};
use fairtriage::runner::{self, stage_seed, Predictions, RunConfig, Summary, STAGE_EXPLAIN, STAGE_SYNTH};
use fairtriage::schema::{load_schema, synthesize, FeatureSchema, RawDataset, SignalSpec, TargetLevel};
use fairtriage::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fairtriage",
    version,
    about = "Fairness-aware triage modelling on tabular records"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset from a feature schema.
    Synth(SynthArgs),
    /// Drop sparse records and one-hot encode a raw dataset.
    Preprocess(PreprocessArgs),
    /// Cross-validate a model, fit it on the full design and score it.
    Evaluate(EvaluateArgs),
    /// FNR audit of predictions across sensitive groups.
    Audit(AuditArgs),
    /// Threshold optimizer and exponentiated-gradient mitigation.
    Mitigate(MitigateArgs),
    /// Local surrogate explanations for a fitted model.
    Explain(ExplainArgs),
    /// Print the summary of a run directory.
    Report(ReportArgs),
    /// Run the full pipeline from a configuration file.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Feature schema JSON; the bundled schema when omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Signal specification JSON (label-conditional shifts, group bias).
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Raw dataset CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "EH SUPPORT")]
    target: TargetLevel,
    #[arg(long, default_value_t = DEFAULT_DROP_THRESHOLD)]
    drop_threshold: f64,
    /// Directory receiving design.csv and groups.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Encoded design CSV from `preprocess`.
    #[arg(long)]
    design: PathBuf,
    /// Model kind (e.g. logistic_regression), inline JSON spec or a path to one.
    #[arg(long, default_value = "logistic_regression")]
    model: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 30)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed decision threshold; F1-maximising when omitted.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    groups: PathBuf,
    /// Comma-separated sensitive features; every column of the groups file when omitted.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MitigateArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    groups: PathBuf,
    /// Fitted model JSON from `evaluate`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "GENDER")]
    feature: String,
    /// Decision threshold of the unmitigated model.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0.02)]
    epsilon: f64,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    /// Skip the exponentiated-gradient reduction.
    #[arg(long)]
    no_reductions: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Background sample for perturbations; the design itself when omitted.
    #[arg(long)]
    background: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    n_samples: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding summary.json.
    dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides cv.base_seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("FAIRTRIAGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            // only fails when a pool already exists
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let (stage, result) = match cli.command {
        Command::Synth(a) => ("synth", synth(a)),
        Command::Preprocess(a) => ("preprocess", preprocess(a)),
        Command::Evaluate(a) => ("evaluate", evaluate(a)),
        Command::Audit(a) => ("audit", audit_cmd(a)),
        Command::Mitigate(a) => ("mitigate", mitigate(a)),
        Command::Explain(a) => ("explain", explain(a)),
        Command::Report(a) => ("report", report(a)),
        Command::Run(a) => ("run", run(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Stage { stage, source }) => {
            eprintln!("fairtriage: stage {stage} failed: {source}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("fairtriage: stage {stage} failed: {e}");
            ExitCode::FAILURE
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        field: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn schema_or_bundled(path: &Option<PathBuf>) -> Result<FeatureSchema> {
    match path {
        Some(p) => load_schema(p),
        None => Ok(FeatureSchema::lcc()),
    }
}

fn parse_model(arg: &str) -> Result<ModelSpec> {
    let spec: ModelSpec = if arg.trim_start().starts_with('{') {
        serde_json::from_str(arg).map_err(|e| Error::Config {
            field: "model".into(),
            reason: e.to_string(),
        })?
    } else if Path::new(arg).is_file() {
        read_json(Path::new(arg))?
    } else {
        serde_json::from_value(serde_json::json!({ "kind": arg })).map_err(|e| Error::Config {
            field: "model".into(),
            reason: e.to_string(),
        })?
    };
    spec.validate()?;
    Ok(spec)
}

fn synth(a: SynthArgs) -> Result<()> {
    let schema = schema_or_bundled(&a.schema)?;
    let signal: SignalSpec = match &a.signal {
        Some(p) => read_json(p)?,
        None => SignalSpec::default(),
    };
    let data = synthesize(&schema, a.n, &signal, stage_seed(a.seed, STAGE_SYNTH, 0))?;
    data.write_csv_file(&a.out)?;
    println!("wrote {} records to {}", data.len(), a.out.display());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let schema = schema_or_bundled(&a.schema)?;
    let raw = RawDataset::read_csv_file(&schema, &a.input)?;
    let kept = drop_sparse_records(&raw, a.drop_threshold)?;
    let (design, groups) = encode(&kept, a.target)?;
    out_dir(&a.out)?;
    design.write_csv(create(&a.out.join("design.csv"))?)?;
    groups.write_csv(create(&a.out.join("groups.csv"))?)?;
    println!(
        "kept {} of {} records, {} encoded columns, {} positives",
        kept.len(),
        raw.len(),
        design.d(),
        design.positives()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let spec = parse_model(&a.model)?;
    let data = DesignMatrix::read_csv_file(&a.design)?;
    let policy = match a.threshold {
        Some(threshold) => ThresholdPolicy::Fixed { threshold },
        None => ThresholdPolicy::F1Max,
    };
    let cv = CvConfig {
        k: a.k,
        repetitions: a.repetitions,
        base_seed: a.seed,
    };
    let summary = cross_validate(&spec, &data, &cv, policy)?;
    let model = fit_design(&spec, &data, None)?;
    let scores = model.predict_proba(&data.x)?;
    let threshold = tune_threshold(&data.y, &scores, policy)?;
    let predictions = predict_at(&scores, threshold);
    out_dir(&a.out)?;
    model.save(a.out.join("model.json"))?;

    let mut w = csv::Writer::from_writer(create(&a.out.join("metrics.csv"))?);
    w.write_record(["model", "metric", "mean", "std", "n_values"])?;
    let name = spec.short_name();
    for (metric, stat) in [
        ("cv_auc", &summary.auc),
        ("cv_recall", &summary.recall),
        ("cv_precision", &summary.precision),
    ] {
        w.write_record([
            name,
            metric,
            &f64_str(stat.mean),
            &f64_str(stat.std),
            &stat.values.len().to_string(),
        ])?;
    }
    w.write_record([name, "threshold", &f64_str(threshold), "0", "1"])?;
    w.flush().map_err(|source| Error::Io {
        path: a.out.join("metrics.csv"),
        source,
    })?;

    let mut w = csv::Writer::from_writer(create(&a.out.join("roc.csv"))?);
    w.write_record(["model", "fpr", "tpr", "threshold"])?;
    for p in &roc_points(&data.y, &scores)?.points {
        w.write_record([name, &f64_str(p.x), &f64_str(p.y), &f64_str(p.threshold)])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: a.out.join("roc.csv"),
        source,
    })?;

    let mut w = csv::Writer::from_writer(create(&a.out.join("pr_curve.csv"))?);
    w.write_record(["model", "threshold", "precision", "recall", "f1"])?;
    for p in pr_threshold_scan(&data.y, &scores)? {
        w.write_record([
            name,
            &f64_str(p.threshold),
            &f64_str(p.precision),
            &f64_str(p.recall),
            &f64_str(p.f1),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: a.out.join("pr_curve.csv"),
        source,
    })?;

    Predictions {
        y: data.y.clone(),
        scores,
        predictions,
    }
    .write_csv(create(&a.out.join("predictions.csv"))?)?;
    println!(
        "{name}: cv AUC {:.4} ± {:.4}, recall {:.4}, precision {:.4}, threshold {:.4}",
        summary.auc.mean, summary.auc.std, summary.recall.mean, summary.precision.mean, threshold
    );
    Ok(())
}

fn audit_cmd(a: AuditArgs) -> Result<()> {
    let preds = Predictions::read_csv_file(&a.predictions)?;
    let groups = GroupAssignments::read_csv_file(&a.groups)?;
    let features = if a.features.is_empty() {
        groups.names().into_iter().map(str::to_string).collect()
    } else {
        a.features
    };
    let cfg = AuditConfig {
        features,
        alpha: a.alpha,
        ..AuditConfig::default()
    };
    let report = audit(&preds.y, &preds.predictions, &groups, &cfg)?;
    out_dir(&a.out)?;
    report.write_fnr_csv(create(&a.out.join("fnr_by_group.csv"))?)?;
    report.write_ztests_csv(create(&a.out.join("ztests.csv"))?)?;
    for f in &report.features {
        let hits = f.tests.iter().filter(|t| t.result.significant).count();
        println!("{}: {} of {} pairs significant", f.stats.feature, hits, f.tests.len());
    }
    Ok(())
}

fn mitigate(a: MitigateArgs) -> Result<()> {
    let data = DesignMatrix::read_csv_file(&a.design)?;
    let groups = GroupAssignments::read_csv_file(&a.groups)?;
    let model = FittedModel::load(&a.model)?;
    let col = groups.get(&a.feature)?;
    let scores = model.predict_proba(&data.x)?;
    let to_q = |v: Vec<bool>| v.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect::<Vec<f64>>();

    let mut rows = expected_rates("unmitigated", &data.y, &to_q(predict_at(&scores, a.threshold)), col)?;
    let pp = PostprocessConfig {
        grid_step: a.grid_step,
        ..PostprocessConfig::default()
    };
    let gt = fit_threshold_optimizer(&scores, &data.y, col, &pp)?;
    let pred = apply_group_thresholds(&scores, col, &gt)?;
    rows.extend(expected_rates("postprocessing", &data.y, &to_q(pred), col)?);
    if !a.no_reductions {
        let eg = EgConfig {
            epsilon: a.epsilon,
            iterations: a.iterations,
            ..EgConfig::default()
        };
        let rc = exponentiated_gradient(&model.spec, &data, col, &eg)?;
        let q = rc.predict(&data.x, PredictMode::ExpectedScore)?;
        rows.extend(expected_rates("reductions", &data.y, &q, col)?);
    }
    out_dir(&a.out)?;
    write_mitigation_csv(&rows, create(&a.out.join("mitigation.csv"))?)?;
    for (category, t) in &gt.thresholds {
        println!("{} {}: threshold {}", gt.feature, category, f64_str(*t));
    }
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<()> {
    let data = DesignMatrix::read_csv_file(&a.design)?;
    let model = FittedModel::load(&a.model)?;
    let background = match &a.background {
        Some(p) => DesignMatrix::read_csv_file(p)?,
        None => data.clone(),
    };
    let instances: Vec<usize> = (0..data.n().min(a.instances)).collect();
    let cfg = ExplainConfig {
        k: a.k,
        n_samples: a.n_samples,
    };
    let expl = explain_many(
        &model,
        &data.x,
        &instances,
        &background.x,
        &cfg,
        stage_seed(a.seed, STAGE_EXPLAIN, 0),
    )?;
    let scores = model.predict_proba(&data.x)?;
    let outcomes: Vec<Outcome> = instances
        .iter()
        .map(|&i| Outcome::of(data.y[i], scores[i] >= a.threshold))
        .collect();
    let profiles = aggregate(&expl, &outcomes)?;
    out_dir(&a.out)?;
    write_explanations_csv(&expl, &data.column_names, create(&a.out.join("explanations.csv"))?)?;
    write_profiles_csv(
        &profiles,
        &data.column_names,
        create(&a.out.join("importance_profiles.csv"))?,
    )?;
    println!("explained {} instances", expl.len());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let summary = Summary::load(a.dir.join("summary.json"))?;
    print!("{}", runner::render_report(&summary));
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut config = RunConfig::load(&a.config)?;
    if let Some(out) = a.out {
        config.output_dir = out;
    }
    if let Some(seed) = a.seed {
        config.cv.base_seed = seed;
    }
    let art = runner::run(&config)?;
    print!("{}", runner::render_report(&art.summary));
    println!(
        "\nwrote {} files to {}",
        art.manifest.files.len() + 1,
        art.output_dir.display()
    );
    Ok(())
}
