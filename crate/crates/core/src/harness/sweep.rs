use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::synthetic::{gen_synthetic_pair, SyntheticConfig};
use super::train::{
    evaluate, train_target_baseline, train_transfer_baseline, ModelKind, TrainHyper,
};
use crate::baselines::{hscore, leep, logme, nce, pearson, SourcePredictions};
use crate::bound::{bound_from_data, BoundComputation, BoundConfig, BoundMode, Loss};
use crate::decision::{consistency_index, ConfusionMatrix, ConsistencyResult, DecisionRecord};
use crate::error::{Error, Result};
use crate::measures::{subsample_task, Dataset, LabelEncoding, Labels, TaskKind};
use crate::ot::OtConfig;
use crate::par::{self, Execution};

/// Bound parameters shared by all cells. Loss and label encoding follow
/// each cell's model and class count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub k_lambda_product: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub p: f64,
    #[serde(rename = "K_weight_sup")]
    pub k_weight_sup: f64,
    pub lipschitz_floor: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        let c = BoundConfig::new(Loss::CrossEntropy, LabelEncoding::raw_scalar());
        Self {
            k_lambda_product: c.k_lambda_product,
            m: c.m,
            p: c.p,
            k_weight_sup: c.k_weight_sup,
            lipschitz_floor: c.lipschitz_floor,
        }
    }
}

impl BoundParams {
    pub fn config_for(&self, task: TaskKind, model: ModelKind) -> BoundConfig {
        let loss = match model {
            ModelKind::MultinomialLogistic => Loss::CrossEntropy,
            ModelKind::Ridge => Loss::Mse,
        };
        BoundConfig {
            k_lambda_product: self.k_lambda_product,
            m: self.m,
            p: self.p,
            k_weight_sup: self.k_weight_sup,
            lipschitz_floor: self.lipschitz_floor,
            ..BoundConfig::new(loss, LabelEncoding::default_for(task))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelKind,
    pub source_hyper: TrainHyper,
    pub target_hyper: TrainHyper,
    pub continuation_hyper: TrainHyper,
    /// Share of target rows (taken from the top) treated as labelled by the bound.
    pub labelled_fraction: f64,
    /// Sweeps only: when set, the last `ceil(f * n)` rows of each cell's
    /// target domain are held out before subsampling and risks are measured
    /// on them. Otherwise risks are training-set risks.
    pub held_out_fraction: Option<f64>,
    pub bound: BoundParams,
    pub ot: OtConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::MultinomialLogistic,
            source_hyper: TrainHyper::default(),
            target_hyper: TrainHyper::default(),
            continuation_hyper: TrainHyper {
                epochs: 10,
                ..TrainHyper::default()
            },
            labelled_fraction: 1.0,
            held_out_fraction: None,
            bound: BoundParams::default(),
            ot: OtConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.source_hyper.validate()?;
        self.target_hyper.validate()?;
        self.continuation_hyper.validate()?;
        self.ot.validate()?;
        if !(0.0..=1.0).contains(&self.labelled_fraction) {
            return Err(Error::invalid(format!(
                "labelled_fraction must lie in [0, 1], got {}",
                self.labelled_fraction
            )));
        }
        if let Some(f) = self.held_out_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!(
                    "held_out_fraction must lie in (0, 1), got {f}"
                )));
            }
        }
        self.bound
            .config_for(TaskKind::Regression, ModelKind::Ridge)
            .validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineScores {
    pub leep: Option<f64>,
    pub nce: Option<f64>,
    pub logme: Option<f64>,
    pub hscore: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub bound: BoundComputation,
    pub record: DecisionRecord,
    pub source_risk: f64,
    pub risk_without: f64,
    pub risk_with: f64,
    pub accuracy_without: Option<f64>,
    pub accuracy_with: Option<f64>,
    pub baselines: BaselineScores,
}

fn ok_or_log<T>(name: &str, r: Result<T>) -> Option<T> {
    r.map_err(|e| log::debug!("{name} unavailable: {e}")).ok()
}

fn baseline_scores(model: &super::train::LinearModel, target: &Dataset) -> BaselineScores {
    let x = target.features();
    match target.labels() {
        Some(Labels::Classes(y)) => {
            let classes = target.task().classes().unwrap_or(0);
            let preds = SourcePredictions::new(model.predict(x));
            let leep_score = preds
                .as_ref()
                .ok()
                .and_then(|p| ok_or_log("LEEP", leep(p, y, classes)));
            let nce_score = preds
                .as_ref()
                .ok()
                .and_then(|p| ok_or_log("NCE", nce(p.pseudo_labels(), y)));
            let yf: Vec<f64> = y.iter().map(|&c| c as f64).collect();
            BaselineScores {
                leep: leep_score,
                nce: nce_score,
                logme: ok_or_log("LogME", logme(x, &yf, target.task())).map(|s| s.value),
                hscore: ok_or_log("H-score", hscore(x, y)),
            }
        }
        Some(Labels::Values(y)) => BaselineScores {
            logme: ok_or_log("LogME", logme(x, y, TaskKind::Regression)).map(|s| s.value),
            ..Default::default()
        },
        None => BaselineScores::default(),
    }
}

/// Runs one source/target pair end to end: risks, bound, score and baselines.
///
/// Risks are measured on `eval` when given, else on the training rows.
/// `labelled_fraction` only controls how many target labels the bound sees.
pub fn run_pipeline(
    source: &Dataset,
    target: &Dataset,
    eval: Option<&Dataset>,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    config.validate()?;
    let train = target;
    let eval = eval.unwrap_or(target);
    let without = train_target_baseline(train, config.model, &config.target_hyper)?;
    let without_risk = evaluate(&without.model, eval)?;
    let with = train_transfer_baseline(
        source,
        train,
        config.model,
        &config.source_hyper,
        &config.continuation_hyper,
    )?;
    let with_risk = evaluate(&with.model, eval)?;

    let bound_cfg = config.bound.config_for(train.task(), config.model);
    let n_t1 = if config.labelled_fraction == 0.0 {
        0
    } else {
        ((config.labelled_fraction * train.n_samples() as f64) - 1e-9).ceil() as usize
    };
    let bound = bound_from_data(
        source,
        train,
        n_t1,
        with.source_risk.loss,
        &bound_cfg,
        &config.ot,
    )?;
    let record = DecisionRecord::new(target.name(), bound.report.clone(), without_risk.loss)?
        .with_empirical(with_risk.loss - without_risk.loss);

    Ok(PipelineOutput {
        baselines: baseline_scores(&with.source_model, train),
        bound,
        record,
        source_risk: with.source_risk.loss,
        risk_without: without_risk.loss,
        risk_with: with_risk.loss,
        accuracy_without: without_risk.accuracy,
        accuracy_with: with_risk.accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepGrid {
    /// Class counts to keep; empty means all classes.
    pub classes: Vec<usize>,
    /// Fractions of target rows to keep.
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Mean shifts for synthetic inputs; empty means the configured one.
    pub shifts: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum SweepInput {
    Datasets { source: Dataset, target: Dataset },
    Synthetic(SyntheticConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputSummary {
    Datasets {
        source: String,
        target: String,
        n_source: usize,
        n_target: usize,
    },
    Synthetic(SyntheticConfig),
}

impl SweepInput {
    fn summary(&self) -> InputSummary {
        match self {
            SweepInput::Datasets { source, target } => InputSummary::Datasets {
                source: source.name().to_string(),
                target: target.name().to_string(),
                n_source: source.n_samples(),
                n_target: target.n_samples(),
            },
            SweepInput::Synthetic(cfg) => InputSummary::Synthetic(cfg.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    classes: Option<usize>,
    ratio: f64,
    shift: Option<f64>,
    seed: u64,
}

impl Cell {
    fn task_id(&self) -> String {
        let c = self.classes.map_or("all".to_string(), |c| c.to_string());
        let d = self.shift.map_or("-".to_string(), |d| d.to_string());
        format!("c={c};r={};delta={d};seed={}", self.ratio, self.seed)
    }
}

fn dedup_f64(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| a.to_bits() == b.to_bits());
    v
}

fn cells(input: &SweepInput, grid: &SweepGrid) -> Result<Vec<Cell>> {
    if grid.ratios.is_empty() || grid.seeds.is_empty() {
        return Err(Error::invalid(
            "sweep grid needs at least one ratio and one seed",
        ));
    }
    if let Some(r) = grid.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::invalid(format!("ratio must lie in (0, 1], got {r}")));
    }
    let task = match input {
        SweepInput::Datasets { source, target } => {
            if !grid.shifts.is_empty() {
                return Err(Error::invalid("mean shifts only apply to synthetic inputs"));
            }
            if source.task() != target.task() {
                return Err(Error::DimensionMismatch(
                    "source and target tasks differ".into(),
                ));
            }
            target.task()
        }
        SweepInput::Synthetic(cfg) => {
            cfg.validate()?;
            if let Some(d) = grid.shifts.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
                return Err(Error::invalid(format!("mean shift must be >= 0, got {d}")));
            }
            cfg.task_kind
        }
    };
    if !grid.classes.is_empty() && !task.is_classification() {
        return Err(Error::invalid("class grid needs a classification task"));
    }
    let mut classes: Vec<Option<usize>> = grid.classes.iter().map(|&c| Some(c)).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        classes.push(None);
    }
    let shifts: Vec<Option<f64>> = match input {
        SweepInput::Datasets { .. } => vec![None],
        SweepInput::Synthetic(cfg) if grid.shifts.is_empty() => vec![Some(cfg.mean_shift)],
        SweepInput::Synthetic(_) => dedup_f64(&grid.shifts).into_iter().map(Some).collect(),
    };
    let mut seeds = grid.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut out = Vec::new();
    for &c in &classes {
        for &r in &dedup_f64(&grid.ratios) {
            for &d in &shifts {
                for &seed in &seeds {
                    out.push(Cell {
                        classes: c,
                        ratio: r,
                        shift: d,
                        seed,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// One result line of a sweep. The first twelve fields form the fixed CSV prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub task_id: String,
    pub c: Option<usize>,
    pub r: f64,
    pub bound_total: Option<f64>,
    pub tr_score: Option<f64>,
    pub risk_without: Option<f64>,
    pub risk_with: Option<f64>,
    pub empirical_tr: Option<f64>,
    pub leep: Option<f64>,
    pub nce: Option<f64>,
    pub logme: Option<f64>,
    pub hscore: Option<f64>,
    pub delta: Option<f64>,
    pub seed: u64,
    pub source_risk: Option<f64>,
    pub accuracy_without: Option<f64>,
    pub accuracy_with: Option<f64>,
    pub w_x: Option<f64>,
    pub k: Option<f64>,
    pub domain_term: Option<f64>,
    pub n_t: Option<usize>,
    pub n_t1: Option<usize>,
    pub mode: Option<BoundMode>,
    /// `ok`, or the error that stopped this cell.
    pub status: String,
}

pub const SWEEP_CSV_HEADER: [&str; 24] = [
    "task_id",
    "c",
    "r",
    "bound_total",
    "tr_score",
    "risk_without",
    "risk_with",
    "empirical_tr",
    "leep",
    "nce",
    "logme",
    "hscore",
    "delta",
    "seed",
    "source_risk",
    "accuracy_without",
    "accuracy_with",
    "w_x",
    "k",
    "domain_term",
    "n_t",
    "n_t1",
    "mode",
    "status",
];

impl SweepRow {
    fn failed(cell: &Cell, err: &Error) -> Self {
        Self {
            task_id: cell.task_id(),
            c: cell.classes,
            r: cell.ratio,
            bound_total: None,
            tr_score: None,
            risk_without: None,
            risk_with: None,
            empirical_tr: None,
            leep: None,
            nce: None,
            logme: None,
            hscore: None,
            delta: cell.shift,
            seed: cell.seed,
            source_risk: None,
            accuracy_without: None,
            accuracy_with: None,
            w_x: None,
            k: None,
            domain_term: None,
            n_t: None,
            n_t1: None,
            mode: None,
            status: format!("error: {err}"),
        }
    }

    fn from_output(cell: &Cell, out: &PipelineOutput) -> Self {
        Self {
            bound_total: Some(out.bound.report.total),
            tr_score: Some(out.record.tr_score),
            risk_without: Some(out.risk_without),
            risk_with: Some(out.risk_with),
            empirical_tr: out.record.empirical_tr,
            leep: out.baselines.leep,
            nce: out.baselines.nce,
            logme: out.baselines.logme,
            hscore: out.baselines.hscore,
            source_risk: Some(out.source_risk),
            accuracy_without: out.accuracy_without,
            accuracy_with: out.accuracy_with,
            w_x: Some(out.bound.w_x),
            k: Some(out.bound.report.k),
            domain_term: Some(out.bound.report.domain_term),
            n_t: Some(out.bound.n_t),
            n_t1: Some(out.bound.n_t1),
            mode: Some(out.bound.report.mode),
            status: "ok".into(),
            ..Self::failed(cell, &Error::invalid(""))
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn csv_fields(&self) -> Vec<String> {
        fn o<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let mode = self.mode.map(|m| match m {
            BoundMode::Supervised => "supervised",
            BoundMode::Unsupervised => "unsupervised",
        });
        vec![
            self.task_id.clone(),
            o(self.c),
            self.r.to_string(),
            o(self.bound_total),
            o(self.tr_score),
            o(self.risk_without),
            o(self.risk_with),
            o(self.empirical_tr),
            o(self.leep),
            o(self.nce),
            o(self.logme),
            o(self.hscore),
            o(self.delta),
            self.seed.to_string(),
            o(self.source_risk),
            o(self.accuracy_without),
            o(self.accuracy_with),
            o(self.w_x),
            o(self.k),
            o(self.domain_term),
            o(self.n_t),
            o(self.n_t1),
            o(mode),
            self.status.clone(),
        ]
    }
}

fn run_cell(input: &SweepInput, cell: &Cell, config: &PipelineConfig) -> Result<PipelineOutput> {
    let (source, target) = match input {
        SweepInput::Datasets { source, target } => (source.clone(), target.clone()),
        SweepInput::Synthetic(cfg) => gen_synthetic_pair(&SyntheticConfig {
            mean_shift: cell.shift.unwrap_or(cfg.mean_shift),
            seed: cell.seed,
            ..cfg.clone()
        })?,
    };
    let source = match cell.classes {
        Some(_) => subsample_task(&source, cell.classes, 1.0, cell.seed)?,
        None => source,
    };
    let target = match cell.classes {
        Some(_) => subsample_task(&target, cell.classes, 1.0, cell.seed)?,
        None => target,
    };
    let (pool, held_out) = match config.held_out_fraction {
        Some(f) => {
            let n = target.n_samples();
            if n < 2 {
                return Err(Error::invalid("target too small to hold out rows"));
            }
            let held = ((f * n as f64).ceil() as usize).clamp(1, n - 1);
            let rows: Vec<usize> = (n - held..n).collect();
            (target.head(n - held), Some(target.select_rows(&rows)))
        }
        None => (target, None),
    };
    let train = subsample_task(&pool, None, cell.ratio, cell.seed)?.with_name(cell.task_id());
    run_pipeline(&source, &train, held_out.as_ref(), config)
}

/// Runs every grid cell. A failing cell yields a row with an error status;
/// rows come back sorted by `task_id` whatever the execution mode.
pub fn run_sweep(
    input: &SweepInput,
    grid: &SweepGrid,
    config: &PipelineConfig,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let cells = cells(input, grid)?;
    let mut rows = par::map_slice(&cells, exec, |cell| match run_cell(input, cell, config) {
        Ok(out) => SweepRow::from_output(cell, &out),
        Err(e) => {
            log::warn!("cell {} failed: {e}", cell.task_id());
            SweepRow::failed(cell, &e)
        }
    });
    rows.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: Option<f64>,
    pub undefined: bool,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEvaluation {
    /// Pearson correlation of each metric with `risk_with`.
    pub pearson: BTreeMap<String, Correlation>,
    pub confusion: ConfusionMatrix,
    pub ci: ConsistencyResult,
    pub rows_used: usize,
}

type Metric = (&'static str, fn(&SweepRow) -> Option<f64>);

const METRICS: [Metric; 6] = [
    ("bound_total", |r| r.bound_total),
    ("tr_score", |r| r.tr_score),
    ("leep", |r| r.leep),
    ("nce", |r| r.nce),
    ("logme", |r| r.logme),
    ("hscore", |r| r.hscore),
];

/// Correlates each metric column with the loss after transfer and bins
/// score signs. Needs at least 3 successful rows.
pub fn evaluate_sweep(rows: &[SweepRow]) -> Result<SweepEvaluation> {
    let usable: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.is_ok() && r.risk_with.is_some())
        .collect();
    if usable.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 successful rows to evaluate, got {}",
            usable.len()
        )));
    }
    let mut correlations = BTreeMap::new();
    for (name, get) in METRICS {
        let (xs, ys): (Vec<f64>, Vec<f64>) = usable
            .iter()
            .filter_map(|r| Some((get(r)?, r.risk_with?)))
            .unzip();
        let value = pearson(&xs, &ys).ok();
        correlations.insert(
            name.to_string(),
            Correlation {
                value,
                undefined: value.is_none(),
                n: xs.len(),
            },
        );
    }
    let mut confusion = ConfusionMatrix::default();
    for r in &usable {
        if let (Some(e), Some(t)) = (r.empirical_tr, r.tr_score) {
            confusion.add(e, t);
        }
    }
    Ok(SweepEvaluation {
        pearson: correlations,
        ci: consistency_index(&confusion),
        confusion,
        rows_used: usable.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub input: InputSummary,
    pub grid: SweepGrid,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepSettings,
    pub rows: Vec<SweepRow>,
    /// Absent when too few cells succeeded.
    pub evaluation: Option<SweepEvaluation>,
}

/// Runs the sweep and evaluates it.
pub fn sweep_report(
    input: &SweepInput,
    grid: &SweepGrid,
    config: &PipelineConfig,
    exec: Execution,
) -> Result<SweepReport> {
    let rows = run_sweep(input, grid, config, exec)?;
    let evaluation = match evaluate_sweep(&rows) {
        Ok(e) => Some(e),
        Err(e) => {
            log::warn!("sweep not evaluated: {e}");
            None
        }
    };
    Ok(SweepReport {
        config: SweepSettings {
            input: input.summary(),
            grid: grid.clone(),
            pipeline: config.clone(),
        },
        rows,
        evaluation,
    })
}

pub fn write_report_json<W: Write>(report: &SweepReport, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report).map_err(|e| Error::Malformed(e.to_string()))?;
    writeln!(out).map_err(|e| Error::Malformed(e.to_string()))
}

pub fn write_rows_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Malformed(e.to_string());
    w.write_record(SWEEP_CSV_HEADER).map_err(wrap)?;
    for r in rows {
        w.write_record(r.csv_fields()).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::Malformed(e.to_string()))
}
