use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use wdje::baselines::{hscore, leep, logme, nce, SourcePredictions};
use wdje::bound::{bound_from_data, BoundConfig, Loss};
use wdje::decision::{consistency_index, score_from_total, ConfusionMatrix};
use wdje::harness::{
    gen_synthetic_pair, sweep_report, write_report_json, write_rows_csv, BoundParams, LabelShift,
    ModelKind, PipelineConfig, SweepGrid, SweepInput, SyntheticConfig, TrainHyper,
};
use wdje::measures::{
    empirical_measure, load_dataset, write_binary, write_csv, Dataset, EncodingMode, FileFormat,
    LabelEncoding, Labels, TaskKind,
};
use wdje::ot::{wasserstein, GroundMetric, OtConfig, SolverChoice};
use wdje::par::Execution;
use wdje::{Error, Result};

#[derive(Parser)]
#[command(
    name = "wdje",
    version,
    about = "Wasserstein-distance transferability estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Wasserstein distance between two point clouds.
    Wasserstein(WassersteinArgs),
    /// Upper bound on the target risk after transfer.
    Bound(BoundArgs),
    /// Transferability score and decision from a bound and a target-only risk.
    Score(ScoreArgs),
    /// LEEP, NCE, LogME or H-score on target data.
    Baseline(BaselineArgs),
    /// Grid sweep over class counts, target ratios, seeds and shifts.
    Sweep(SweepArgs),
    /// Consistency index from confusion counts or a sweep CSV.
    Consistency(ConsistencyArgs),
    /// Write a synthetic source/target pair.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct Output {
    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
}

#[derive(Args)]
struct OtArgs {
    #[arg(long, value_enum, default_value_t = GroundMetric::Euclidean)]
    metric: GroundMetric,
    /// Wasserstein order.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, value_enum, default_value_t = SolverChoice::Auto)]
    solver: SolverChoice,
    /// Entropic regularization; 0.1 * mean cost when omitted.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Largest n*m sent to the exact solver under --solver auto.
    #[arg(long, default_value_t = 250_000)]
    exact_threshold: usize,
}

impl OtArgs {
    fn config(&self) -> Result<OtConfig> {
        let c = OtConfig {
            metric: self.metric,
            p: self.p,
            solver: self.solver,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            tol: self.tol,
            exact_threshold: self.exact_threshold,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Classification,
    Regression,
}

#[derive(Args)]
struct TaskArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::Classification)]
    task: TaskArg,
    /// Number of classes (classification).
    #[arg(long)]
    classes: Option<usize>,
    /// Name of the label column in feature files.
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Input file format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    input_format: Option<FileFormat>,
}

impl TaskArgs {
    fn task(&self) -> Result<TaskKind> {
        match (self.task, self.classes) {
            (TaskArg::Classification, Some(c)) if c >= 2 => {
                Ok(TaskKind::Classification { classes: c })
            }
            (TaskArg::Classification, _) => Err(Error::InvalidArgument(
                "classification needs --classes with a value >= 2".into(),
            )),
            (TaskArg::Regression, _) => Ok(TaskKind::Regression),
        }
    }

    fn load(&self, features: &Path, labels: Option<&Path>) -> Result<Dataset> {
        let task = self.task()?;
        let format = self
            .input_format
            .unwrap_or_else(|| FileFormat::from_path(features));
        let data = load_dataset(features, format, task, Some(&self.label_column))?;
        let Some(path) = labels else { return Ok(data) };
        let format = self
            .input_format
            .unwrap_or_else(|| FileFormat::from_path(path));
        let column = load_dataset(path, format, TaskKind::Regression, Some("\u{0}"))?;
        if column.n_features() != 1 {
            return Err(Error::Malformed(format!(
                "{}: label file must have exactly one column",
                path.display()
            )));
        }
        let values: Vec<f64> = column.features().iter().copied().collect();
        Dataset::new(
            data.name(),
            data.features().clone(),
            Some(Labels::from_values(values, task)?),
            task,
        )
    }
}

#[derive(Args)]
struct WassersteinArgs {
    /// First point cloud (CSV or binary).
    #[arg(long)]
    u: PathBuf,
    /// Second point cloud.
    #[arg(long)]
    v: PathBuf,
    /// Optional column holding atom weights; uniform when absent.
    #[arg(long, default_value = "weight")]
    weight_column: String,
    /// Include the transport plan in the JSON output.
    #[arg(long)]
    plan: bool,
    #[command(flatten)]
    ot: OtArgs,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct BoundFlags {
    /// Loss; cross_entropy for classification and mse for regression by default.
    #[arg(long, value_enum)]
    loss: Option<Loss>,
    /// Product k * lambda.
    #[arg(long, default_value_t = 0.001)]
    k_lambda: f64,
    /// Bound on the loss (M).
    #[arg(long = "M", default_value_t = 1.0)]
    m: f64,
    /// Supremum of regressor weights (MSE recipe).
    #[arg(long = "K-weight-sup", default_value_t = 1.0)]
    k_weight_sup: f64,
    #[arg(long, default_value_t = 1e-6)]
    lipschitz_floor: f64,
    /// Label encoding; one_hot for classification and raw_scalar for regression by default.
    #[arg(long, value_enum)]
    encoding: Option<EncodingMode>,
}

impl BoundFlags {
    fn config(&self, task: TaskKind, p: f64) -> Result<BoundConfig> {
        let loss = self.loss.unwrap_or(if task.is_classification() {
            Loss::CrossEntropy
        } else {
            Loss::Mse
        });
        let encoding = match (self.encoding, task) {
            (None, _) => LabelEncoding::default_for(task),
            (Some(EncodingMode::RawScalar), _) => LabelEncoding::raw_scalar(),
            (Some(EncodingMode::OneHot), TaskKind::Classification { classes }) => {
                LabelEncoding::one_hot(classes)
            }
            (Some(EncodingMode::OneHot), TaskKind::Regression) => {
                return Err(Error::InvalidArgument(
                    "one_hot encoding needs a classification task".into(),
                ))
            }
        };
        let c = BoundConfig {
            k_lambda_product: self.k_lambda,
            m: self.m,
            p,
            k_weight_sup: self.k_weight_sup,
            lipschitz_floor: self.lipschitz_floor,
            ..BoundConfig::new(loss, encoding)
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    source_features: PathBuf,
    /// Separate one-column label file; otherwise the label column of the feature file.
    #[arg(long)]
    source_labels: Option<PathBuf>,
    #[arg(long)]
    target_features: PathBuf,
    #[arg(long)]
    target_labels: Option<PathBuf>,
    /// Empirical source risk of the source model.
    #[arg(long)]
    source_risk: f64,
    /// Number of labelled target rows (taken from the top); all labelled rows when omitted, 0 for the unsupervised form.
    #[arg(long)]
    n_t1: Option<usize>,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    bound: BoundFlags,
    #[command(flatten)]
    ot: OtArgs,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct ScoreArgs {
    /// Bound total.
    #[arg(
        long,
        conflicts_with = "bound_report",
        required_unless_present = "bound_report"
    )]
    bound_total: Option<f64>,
    /// JSON written by the bound command.
    #[arg(long)]
    bound_report: Option<PathBuf>,
    /// Risk of the target-only model.
    #[arg(long)]
    risk_without: f64,
    /// Observed loss difference after transfer, if known.
    #[arg(long)]
    empirical_tr: Option<f64>,
    #[command(flatten)]
    out: Output,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BaselineMetric {
    Leep,
    Nce,
    Logme,
    Hscore,
    All,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum, default_value_t = BaselineMetric::All)]
    metric: BaselineMetric,
    #[arg(long)]
    target_features: PathBuf,
    #[arg(long)]
    target_labels: Option<PathBuf>,
    /// Source-model class probabilities on the target rows (CSV, one column per source class); needed by LEEP and NCE.
    #[arg(long)]
    source_probs: Option<PathBuf>,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    out: Output,
}

/// Comma-separated list; empty input gives an empty list.
fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("--{flag}: cannot parse '{t}'")))
        })
        .collect()
}

#[derive(Args)]
struct SynthFlags {
    #[arg(long = "synth-task", value_enum, default_value_t = TaskArg::Classification)]
    synth_task: TaskArg,
    #[arg(long = "synth-classes", default_value_t = 4)]
    synth_classes: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Translation of the target inputs.
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    /// Comma-separated class permutation (classification).
    #[arg(long)]
    permutation: Option<String>,
    /// Additive output shift (regression).
    #[arg(long)]
    label_offset: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SynthFlags {
    fn config(&self) -> Result<SyntheticConfig> {
        let task_kind = match self.synth_task {
            TaskArg::Classification => TaskKind::Classification {
                classes: self.synth_classes,
            },
            TaskArg::Regression => TaskKind::Regression,
        };
        let label_shift = match (&self.permutation, self.label_offset) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument(
                    "--permutation and --label-offset are mutually exclusive".into(),
                ))
            }
            (Some(p), None) => LabelShift::Permutation(parse_list("permutation", p)?),
            (None, Some(o)) => LabelShift::Additive(o),
            (None, None) => LabelShift::None,
        };
        let c = SyntheticConfig {
            task_kind,
            feature_dim: self.dim,
            samples_per_domain: self.samples,
            mean_shift: self.shift,
            label_shift,
            noise_sigma: self.noise,
            seed: self.seed,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Source file; a synthetic pair is generated when source and target are omitted.
    #[arg(long, requires = "target_features")]
    source_features: Option<PathBuf>,
    #[arg(long, requires = "source_features")]
    target_features: Option<PathBuf>,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    synth: SynthFlags,
    /// Class counts to keep (comma-separated); all classes when omitted.
    #[arg(long, default_value = "")]
    c_values: String,
    /// Fractions of target rows to keep.
    #[arg(long, default_value = "1")]
    ratios: String,
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Mean shifts for synthetic pairs; --shift when omitted.
    #[arg(long, default_value = "")]
    shifts: String,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    /// Continuation epochs on the target after the source fit.
    #[arg(long, default_value_t = 10)]
    continuation_epochs: usize,
    #[arg(long)]
    continuation_lr: Option<f64>,
    /// Mini-batch size for the continuation phase; full batch when omitted.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Share of target rows the bound treats as labelled.
    #[arg(long, default_value_t = 1.0)]
    labelled_fraction: f64,
    /// Hold out this share of each target domain and measure risks on it.
    #[arg(long)]
    held_out: Option<f64>,
    #[command(flatten)]
    bound: BoundFlags,
    #[command(flatten)]
    ot: OtArgs,
    /// Run cells on the calling thread only.
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct ConsistencyArgs {
    /// Counts N++,N+-,N-+,N-- (empirical sign first).
    #[arg(long, conflicts_with = "records", required_unless_present = "records")]
    counts: Option<String>,
    /// Sweep CSV with empirical_tr and tr_score columns.
    #[arg(long)]
    records: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    synth: SynthFlags,
    /// Source output file (.csv or .bin).
    #[arg(long)]
    out_source: PathBuf,
    /// Target output file (.csv or .bin).
    #[arg(long)]
    out_target: PathBuf,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_json<T: Serialize>(out: &Output, value: &T) -> Result<()> {
    let mut w = sink(out.output.as_deref())?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Malformed(e.to_string()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::Malformed(e.to_string()))
}

/// Single-row CSV.
fn emit_row(out: &Output, fields: &[(&str, String)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink(out.output.as_deref())?);
    let wrap = |e: csv::Error| Error::Malformed(e.to_string());
    w.write_record(fields.iter().map(|f| f.0)).map_err(wrap)?;
    w.write_record(fields.iter().map(|f| f.1.as_str()))
        .map_err(wrap)?;
    w.flush().map_err(|e| Error::Malformed(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn load_points(path: &Path, weight_column: &str) -> Result<wdje::measures::DiscreteMeasure> {
    let data = load_dataset(
        path,
        FileFormat::from_path(path),
        TaskKind::Regression,
        Some(weight_column),
    )?;
    let weights = data.labels().map(Labels::as_f64);
    empirical_measure(data.features().clone(), weights.as_deref())
}

fn cmd_wasserstein(a: &WassersteinArgs) -> Result<()> {
    let config = a.ot.config()?;
    let u = load_points(&a.u, &a.weight_column)?;
    let v = load_points(&a.v, &a.weight_column)?;
    let (distance, plan) = wasserstein(&u, &v, &config)?;
    match a.out.format {
        OutputFormat::Json => {
            let mut report = json!({
                "config": config,
                "distance": distance,
                "objective": plan.objective,
                "solver": plan.solver,
                "iterations": plan.iterations,
                "converged": plan.converged,
            });
            if a.plan {
                report["plan"] =
                    serde_json::to_value(&plan).map_err(|e| Error::Malformed(e.to_string()))?;
            }
            emit_json(&a.out, &report)
        }
        OutputFormat::Csv => emit_row(
            &a.out,
            &[
                ("distance", distance.to_string()),
                ("objective", plan.objective.to_string()),
                ("solver", format!("{:?}", plan.solver).to_lowercase()),
                ("iterations", plan.iterations.to_string()),
                ("converged", plan.converged.to_string()),
            ],
        ),
    }
}

fn cmd_bound(a: &BoundArgs) -> Result<()> {
    let task = a.task.task()?;
    let config = a.bound.config(task, a.ot.p)?;
    let ot = a.ot.config()?;
    if !(a.source_risk >= 0.0) || !a.source_risk.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "--source-risk must be >= 0, got {}",
            a.source_risk
        )));
    }
    let source = a
        .task
        .load(&a.source_features, a.source_labels.as_deref())?;
    let target = a
        .task
        .load(&a.target_features, a.target_labels.as_deref())?;
    let n_t1 = a.n_t1.unwrap_or(if target.labels().is_some() {
        target.n_samples()
    } else {
        0
    });
    let result = bound_from_data(&source, &target, n_t1, a.source_risk, &config, &ot)?;
    match a.out.format {
        OutputFormat::Json => emit_json(
            &a.out,
            &json!({ "config": { "bound": config, "ot": ot, "n_t1": n_t1 }, "result": result }),
        ),
        OutputFormat::Csv => {
            let r = &result.report;
            emit_row(
                &a.out,
                &[
                    ("total", r.total.to_string()),
                    ("source_risk", r.source_risk.to_string()),
                    ("domain_term", r.domain_term.to_string()),
                    ("task_term_w", r.task_term_w.to_string()),
                    ("task_term_moment", r.task_term_moment.to_string()),
                    ("slack_term", r.slack_term.to_string()),
                    ("k", r.k.to_string()),
                    ("lambda", r.lambda.to_string()),
                    ("w_x", result.w_x.to_string()),
                    ("n_t1", n_t1.to_string()),
                ],
            )
        }
    }
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    if !(a.risk_without >= 0.0) || !a.risk_without.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "--risk-without must be >= 0, got {}",
            a.risk_without
        )));
    }
    let total = match (a.bound_total, &a.bound_report) {
        (Some(t), _) => t,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
            v.pointer("/result/report/total")
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| {
                    Error::Malformed(format!("{}: no result.report.total", path.display()))
                })?
        }
        (None, None) => unreachable!("clap requires one of the two"),
    };
    if !total.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bound total must be finite, got {total}"
        )));
    }
    let (tr_score, decision) = score_from_total(total, a.risk_without)?;
    let empirical_transferable = a.empirical_tr.map(|e| e < 0.0);
    match a.out.format {
        OutputFormat::Json => emit_json(
            &a.out,
            &json!({
                "config": { "bound_total": total, "risk_without": a.risk_without, "empirical_tr": a.empirical_tr },
                "tr_score": tr_score,
                "decision": decision,
                "empirical_transferable": empirical_transferable,
            }),
        ),
        OutputFormat::Csv => emit_row(
            &a.out,
            &[
                ("bound_total", total.to_string()),
                ("risk_without", a.risk_without.to_string()),
                ("tr_score", tr_score.to_string()),
                (
                    "decision",
                    serde_json::to_value(decision)
                        .unwrap()
                        .as_str()
                        .unwrap_or("")
                        .to_string(),
                ),
                ("empirical_tr", opt(a.empirical_tr)),
            ],
        ),
    }
}

fn read_probs(path: &Path) -> Result<SourcePredictions> {
    let data = load_dataset(
        path,
        FileFormat::from_path(path),
        TaskKind::Regression,
        Some("\u{0}"),
    )?;
    SourcePredictions::new(data.features().clone())
}

fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let task = a.task.task()?;
    let wants = |m| a.metric == m || a.metric == BaselineMetric::All;
    let needs_probs = a.metric == BaselineMetric::Leep || a.metric == BaselineMetric::Nce;
    if needs_probs && a.source_probs.is_none() {
        return Err(Error::InvalidArgument(
            "LEEP and NCE need --source-probs".into(),
        ));
    }
    let target = a
        .task
        .load(&a.target_features, a.target_labels.as_deref())?;
    let labels = target
        .labels()
        .ok_or_else(|| Error::InvalidArgument("baselines need target labels".into()))?;
    let classes = match labels {
        Labels::Classes(y) => Some(y.as_slice()),
        Labels::Values(_) => None,
    };
    let preds = a.source_probs.as_deref().map(read_probs).transpose()?;
    let mut scores = serde_json::Map::new();
    if let (Some(p), true) = (
        &preds,
        wants(BaselineMetric::Leep) || wants(BaselineMetric::Nce),
    ) {
        let y = classes.ok_or_else(|| {
            Error::InvalidArgument("LEEP and NCE need a classification task".into())
        })?;
        if wants(BaselineMetric::Leep) {
            scores.insert(
                "leep".into(),
                json!(leep(p, y, task.classes().unwrap_or(0))?),
            );
        }
        if wants(BaselineMetric::Nce) {
            if p.len() != y.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} predictions but {} labels",
                    p.len(),
                    y.len()
                )));
            }
            scores.insert("nce".into(), json!(nce(p.pseudo_labels(), y)?));
        }
    }
    if wants(BaselineMetric::Logme) {
        let s = logme(target.features(), &labels.as_f64(), task)?;
        scores.insert("logme".into(), json!(s.value));
        scores.insert("logme_converged".into(), json!(s.converged));
    }
    if wants(BaselineMetric::Hscore) {
        match classes {
            Some(y) => {
                scores.insert("hscore".into(), json!(hscore(target.features(), y)?));
            }
            None if a.metric == BaselineMetric::Hscore => {
                return Err(Error::InvalidArgument(
                    "H-score needs a classification task".into(),
                ))
            }
            None => {}
        }
    }
    match a.out.format {
        OutputFormat::Json => emit_json(
            &a.out,
            &json!({ "config": { "task": task }, "scores": scores }),
        ),
        OutputFormat::Csv => {
            let fields: Vec<(&str, String)> = scores
                .iter()
                .map(|(k, v)| (k.as_str(), v.to_string()))
                .collect();
            emit_row(&a.out, &fields)
        }
    }
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let ot = a.ot.config()?;
    let continuation = TrainHyper {
        learning_rate: a.continuation_lr.unwrap_or(a.learning_rate),
        epochs: a.continuation_epochs,
        l2: a.l2,
        batch_size: a.batch_size,
    };
    let fit = TrainHyper {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        l2: a.l2,
        batch_size: None,
    };
    let probe = a.bound.config(TaskKind::Regression, a.ot.p)?;
    let grid = SweepGrid {
        classes: parse_list("c-values", &a.c_values)?,
        ratios: parse_list("ratios", &a.ratios)?,
        seeds: parse_list("seeds", &a.seeds)?,
        shifts: parse_list("shifts", &a.shifts)?,
    };
    let synthetic = a.source_features.is_none();
    let synth_config = if synthetic {
        Some(a.synth.config()?)
    } else {
        None
    };
    let task = match &synth_config {
        Some(c) => c.task_kind,
        None => a.task.task()?,
    };
    let config = PipelineConfig {
        model: a.model.unwrap_or(ModelKind::for_task(task)),
        source_hyper: fit,
        target_hyper: fit,
        continuation_hyper: continuation,
        labelled_fraction: a.labelled_fraction,
        held_out_fraction: a.held_out,
        bound: BoundParams {
            k_lambda_product: probe.k_lambda_product,
            m: probe.m,
            p: probe.p,
            k_weight_sup: probe.k_weight_sup,
            lipschitz_floor: probe.lipschitz_floor,
        },
        ot,
    };
    config.validate()?;
    let input = match (synth_config, &a.source_features, &a.target_features) {
        (Some(c), _, _) => SweepInput::Synthetic(c),
        (None, Some(s), Some(t)) => SweepInput::Datasets {
            source: a.task.load(s, None)?,
            target: a.task.load(t, None)?,
        },
        _ => unreachable!("clap enforces source and target together"),
    };
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let report = sweep_report(&input, &grid, &config, exec)?;
    let w = sink(a.out.output.as_deref())?;
    match a.out.format {
        OutputFormat::Json => write_report_json(&report, w),
        OutputFormat::Csv => write_rows_csv(&report.rows, w),
    }
}

fn counts_from_records(path: &Path) -> Result<ConfusionMatrix> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Malformed(format!("{}: missing column {name}", path.display())))
    };
    let (ie, it) = (col("empirical_tr")?, col("tr_score")?);
    let mut cm = ConfusionMatrix::default();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let field = |i: usize| -> Result<Option<f64>> {
            let s = record.get(i).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::Parse {
                row,
                column: i,
                message: format!("'{s}' is not a number"),
            })
        };
        if let (Some(e), Some(t)) = (field(ie)?, field(it)?) {
            cm.add(e, t);
        }
    }
    Ok(cm)
}

fn cmd_consistency(a: &ConsistencyArgs) -> Result<()> {
    let cm = match (&a.counts, &a.records) {
        (Some(c), _) => match parse_list::<usize>("counts", c)?.as_slice() {
            &[pp, pm, mp, mm] => ConfusionMatrix::from_counts(pp, pm, mp, mm),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "--counts needs 4 values (N++,N+-,N-+,N--), got '{c}'"
                )))
            }
        },
        (None, Some(path)) => counts_from_records(path)?,
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let ci = consistency_index(&cm);
    match a.out.format {
        OutputFormat::Json => emit_json(
            &a.out,
            &json!({
                "confusion": cm,
                "ci_table": ci.ci_table.value,
                "ci_definition": ci.ci_definition.value,
                "ci": ci,
            }),
        ),
        OutputFormat::Csv => emit_row(
            &a.out,
            &[
                ("n_pp", cm.n_pp.to_string()),
                ("n_pm", cm.n_pm.to_string()),
                ("n_mp", cm.n_mp.to_string()),
                ("n_mm", cm.n_mm.to_string()),
                ("ci_table", opt(ci.ci_table.value)),
                ("ci_definition", opt(ci.ci_definition.value)),
            ],
        ),
    }
}

fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    match FileFormat::from_path(path) {
        FileFormat::Binary => write_binary(d, path),
        FileFormat::Csv => write_csv(d, path),
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let config = a.synth.config()?;
    let (source, target) = gen_synthetic_pair(&config)?;
    write_dataset(&source, &a.out_source)?;
    write_dataset(&target, &a.out_target)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Wasserstein(a) => cmd_wasserstein(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Score(a) => cmd_score(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Consistency(a) => cmd_consistency(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
