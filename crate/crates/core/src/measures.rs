//! Datasets, empirical measures and label handling.
//!
//! A [`Dataset`] is a dense feature matrix with optional labels. Empirical
//! measures ([`DiscreteMeasure`]) are weighted Dirac mixtures over rows of a
//! matrix; they are what the transport solvers consume.
//!
//! Two on-disk formats are supported:
//!
//! * CSV: UTF-8, one header row, feature columns followed by an optional
//!   label column (named `label` unless another name is given).
//! * Binary: `b"WDJE"`, `u32` version (1), `u64` rows, `u64` cols, then
//!   row-major little-endian `f64` values. A `u8` tag follows (0 = no labels,
//!   1 = labels); when set, a second block of `u64` rows, `u64` cols and
//!   row-major `f64` values holds the labels as an `n x 1` matrix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"WDJE";
pub const BINARY_VERSION: u32 = 1;

/// Tolerance on the total mass of a normalized measure.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    Classification { classes: usize },
    Regression,
}

impl TaskKind {
    pub fn classes(&self) -> Option<usize> {
        match self {
            TaskKind::Classification { classes } => Some(*classes),
            TaskKind::Regression => None,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, TaskKind::Classification { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match self {
            Labels::Classes(v) => v.iter().map(|&c| c as f64).collect(),
            Labels::Values(v) => v.clone(),
        }
    }

    pub fn value(&self, i: usize) -> f64 {
        match self {
            Labels::Classes(v) => v[i] as f64,
            Labels::Values(v) => v[i],
        }
    }

    fn select(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::Classes(v) => Labels::Classes(rows.iter().map(|&i| v[i]).collect()),
            Labels::Values(v) => Labels::Values(rows.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Interprets raw label values under a task kind, checking ranges.
    pub fn from_values(values: Vec<f64>, task: TaskKind) -> Result<Labels> {
        for (row, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column: 0 });
            }
        }
        match task {
            TaskKind::Regression => Ok(Labels::Values(values)),
            TaskKind::Classification { classes } => values
                .iter()
                .enumerate()
                .map(|(row, &v)| {
                    if v < 0.0 || v >= classes as f64 {
                        Err(Error::LabelOutOfRange {
                            row,
                            label: v,
                            classes,
                        })
                    } else if v.fract() != 0.0 {
                        Err(Error::Parse {
                            row,
                            column: 0,
                            message: format!("class label {v} is not an integer"),
                        })
                    } else {
                        Ok(v as usize)
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map(Labels::Classes),
        }
    }
}

/// Feature matrix (rows are samples) with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: DMatrix<f64>,
    labels: Option<Labels>,
    task: TaskKind,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<f64>,
        labels: Option<Labels>,
        task: TaskKind,
    ) -> Result<Self> {
        if let TaskKind::Classification { classes } = task {
            if classes < 2 {
                return Err(Error::invalid(format!(
                    "classification needs at least 2 classes, got {classes}"
                )));
            }
        }
        for r in 0..features.nrows() {
            for c in 0..features.ncols() {
                if !features[(r, c)].is_finite() {
                    return Err(Error::NonFinite { row: r, column: c });
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != features.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "{} feature rows but {} labels",
                    features.nrows(),
                    labels.len()
                )));
            }
            match (labels, task) {
                (Labels::Classes(v), TaskKind::Classification { classes }) => {
                    if let Some((row, &c)) = v.iter().enumerate().find(|(_, &c)| c >= classes) {
                        return Err(Error::LabelOutOfRange {
                            row,
                            label: c as f64,
                            classes,
                        });
                    }
                }
                (Labels::Values(v), TaskKind::Regression) => {
                    if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::NonFinite { row, column: 0 });
                    }
                }
                _ => {
                    return Err(Error::invalid(
                        "label type does not match task kind".to_string(),
                    ))
                }
            }
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            task,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(rows.iter()),
            labels: self.labels.as_ref().map(|l| l.select(rows)),
            task: self.task,
        }
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Dataset {
        let rows: Vec<usize> = (0..n.min(self.n_samples())).collect();
        self.select_rows(&rows)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Dataset {
        self.name = name.into();
        self
    }

    pub fn without_labels(&self) -> Dataset {
        Dataset {
            labels: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Csv,
    Binary,
}

impl FileFormat {
    /// Guesses from the extension: `.bin`/`.wdje` are binary, anything else CSV.
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("wdje") => FileFormat::Binary,
            _ => FileFormat::Csv,
        }
    }
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    format: FileFormat,
    task: TaskKind,
    label_column: Option<&str>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let (features, labels) = match format {
        FileFormat::Csv => read_csv_matrix(path, label_column.unwrap_or("label"))?,
        FileFormat::Binary => read_binary_matrix(path)?,
    };
    let labels = labels.map(|v| Labels::from_values(v, task)).transpose()?;
    Dataset::new(name, features, labels, task)
}

fn read_csv_matrix(path: &Path, label_column: &str) -> Result<(DMatrix<f64>, Option<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?
        .clone();
    if headers.is_empty() {
        return Err(Error::Malformed(format!(
            "{}: empty header",
            path.display()
        )));
    }
    let label_idx = headers.iter().position(|h| h == label_column);
    let n_cols = headers.len();
    let n_features = n_cols - usize::from(label_idx.is_some());

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n_rows = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != n_cols {
            return Err(Error::Parse {
                row,
                column: record.len().min(n_cols),
                message: format!("expected {n_cols} fields, found {}", record.len()),
            });
        }
        for (column, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column,
                message: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column });
            }
            if Some(column) == label_idx {
                labels.push(v);
            } else {
                values.push(v);
            }
        }
        n_rows += 1;
    }
    let features = DMatrix::from_row_slice(n_rows, n_features, &values);
    Ok((features, label_idx.map(|_| labels)))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_block(r: &mut impl Read) -> Result<DMatrix<f64>> {
    let short = |e: std::io::Error| Error::Malformed(format!("truncated matrix block: {e}"));
    let rows = read_u64(r).map_err(short)? as usize;
    let cols = read_u64(r).map_err(short)? as usize;
    let mut values = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 24));
    let mut b = [0u8; 8];
    for i in 0..rows * cols {
        r.read_exact(&mut b).map_err(short)?;
        let v = f64::from_le_bytes(b);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: i / cols,
                column: i % cols,
            });
        }
        values.push(v);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn read_binary_matrix(path: &Path) -> Result<(DMatrix<f64>, Option<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Malformed("missing magic bytes".into()))?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Malformed(format!("bad magic {magic:?}")));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)
        .map_err(|_| Error::Malformed("missing version".into()))?;
    let version = u32::from_le_bytes(v);
    if version != BINARY_VERSION {
        return Err(Error::Malformed(format!("unsupported version {version}")));
    }
    let features = read_block(&mut r)?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| Error::Malformed("missing label tag".into()))?;
    let labels = match tag[0] {
        0 => None,
        1 => {
            let block = read_block(&mut r)?;
            if block.ncols() != 1 || block.nrows() != features.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "label block is {}x{}, expected {}x1",
                    block.nrows(),
                    block.ncols(),
                    features.nrows()
                )));
            }
            Some(block.iter().copied().collect())
        }
        t => return Err(Error::Malformed(format!("unknown label tag {t}"))),
    };
    Ok((features, labels))
}

fn write_block(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_all(&m[(r, c)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_binary(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        write_block(w, &dataset.features)?;
        match &dataset.labels {
            None => w.write_all(&[0u8])?,
            Some(labels) => {
                w.write_all(&[1u8])?;
                let column = DMatrix::from_column_slice(labels.len(), 1, &labels.as_f64());
                write_block(w, &column)?;
            }
        }
        w.flush()
    };
    run(&mut w).map_err(|e| Error::io(path, e))
}

pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
    let mut header: Vec<String> = (0..dataset.n_features()).map(|j| format!("f{j}")).collect();
    if dataset.labels.is_some() {
        header.push("label".into());
    }
    let wrap = |e: csv::Error| Error::Malformed(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(wrap)?;
    for r in 0..dataset.n_samples() {
        let mut rec: Vec<String> = (0..dataset.n_features())
            .map(|c| dataset.features[(r, c)].to_string())
            .collect();
        if let Some(labels) = &dataset.labels {
            rec.push(labels.value(r).to_string());
        }
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Weighted Dirac mixture over the rows of `points`.
///
/// An empty measure has zero rows and is a legitimate state (for instance
/// the second half of a label split when every source label is paired).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: DMatrix<f64>,
    weights: DVector<f64>,
}

impl DiscreteMeasure {
    pub fn empty(dim: usize) -> Self {
        Self {
            points: DMatrix::zeros(0, dim),
            weights: DVector::zeros(0),
        }
    }

    pub fn uniform(points: DMatrix<f64>) -> Result<Self> {
        empirical_measure(points, None)
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// True when both measures have the same atoms with the same weights, in order.
    pub fn same_as(&self, other: &DiscreteMeasure) -> bool {
        self.points == other.points && self.weights == other.weights
    }
}

/// Builds a measure on the rows of `points`; absent weights become uniform,
/// given weights are renormalized to unit mass.
pub fn empirical_measure(points: DMatrix<f64>, weights: Option<&[f64]>) -> Result<DiscreteMeasure> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::EmptyMeasure);
    }
    let weights = match weights {
        None => DVector::from_element(n, 1.0 / n as f64),
        Some(w) => {
            if w.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{n} points but {} weights",
                    w.len()
                )));
            }
            if let Some(bad) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
                return Err(Error::invalid(format!(
                    "weight {bad} is negative or non-finite"
                )));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::invalid("all weights are zero"));
            }
            DVector::from_iterator(n, w.iter().map(|x| x / total))
        }
    };
    Ok(DiscreteMeasure { points, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    OneHot,
    RawScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEncoding {
    pub mode: EncodingMode,
    pub class_count: Option<usize>,
}

impl LabelEncoding {
    pub fn one_hot(classes: usize) -> Self {
        Self {
            mode: EncodingMode::OneHot,
            class_count: Some(classes),
        }
    }

    pub fn raw_scalar() -> Self {
        Self {
            mode: EncodingMode::RawScalar,
            class_count: None,
        }
    }

    /// One-hot for classification, raw scalars for regression.
    pub fn default_for(task: TaskKind) -> Self {
        match task {
            TaskKind::Classification { classes } => Self::one_hot(classes),
            TaskKind::Regression => Self::raw_scalar(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.class_count) {
            (EncodingMode::OneHot, Some(c)) if c >= 2 => Ok(()),
            (EncodingMode::OneHot, _) => {
                Err(Error::invalid("one-hot encoding needs class_count >= 2"))
            }
            (EncodingMode::RawScalar, _) => Ok(()),
        }
    }

    pub fn width(&self) -> usize {
        match self.mode {
            EncodingMode::OneHot => self.class_count.unwrap_or(0),
            EncodingMode::RawScalar => 1,
        }
    }
}

pub fn encode_labels(labels: &Labels, encoding: LabelEncoding) -> Result<DMatrix<f64>> {
    encoding.validate()?;
    match encoding.mode {
        EncodingMode::RawScalar => {
            let v = labels.as_f64();
            Ok(DMatrix::from_column_slice(v.len(), 1, &v))
        }
        EncodingMode::OneHot => {
            let classes = encoding.class_count.unwrap_or(0);
            let Labels::Classes(v) = labels else {
                return Err(Error::invalid(
                    "one-hot encoding requested on real-valued labels",
                ));
            };
            let mut m = DMatrix::zeros(v.len(), classes);
            for (row, &c) in v.iter().enumerate() {
                if c >= classes {
                    return Err(Error::LabelOutOfRange {
                        row,
                        label: c as f64,
                        classes,
                    });
                }
                m[(row, c)] = 1.0;
            }
            Ok(m)
        }
    }
}

/// Splits the source labels into a measure over the first `n_t1` labels and
/// one over the rest, both uniform. Either side may come back empty.
pub fn split_source_labels(
    source: &Dataset,
    n_t1: usize,
    encoding: LabelEncoding,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let labels = source
        .labels()
        .ok_or_else(|| Error::invalid("source dataset has no labels"))?;
    let n_s = labels.len();
    if n_t1 > n_s {
        return Err(Error::invalid(format!(
            "n_t1 = {n_t1} exceeds the {n_s} source labels"
        )));
    }
    let encoded = encode_labels(labels, encoding)?;
    let dim = encoded.ncols();
    let part = |start: usize, end: usize| -> Result<DiscreteMeasure> {
        if start == end {
            Ok(DiscreteMeasure::empty(dim))
        } else {
            DiscreteMeasure::uniform(encoded.rows(start, end - start).into_owned())
        }
    };
    Ok((part(0, n_t1)?, part(n_t1, n_s)?))
}

/// Keeps rows with label `< classes` (classification only) and then draws
/// `ceil(ratio * remaining)` rows without replacement, preserving row order.
///
/// Row sampling uses ChaCha8 seeded with `seed`. For regression tasks the
/// class filter is ignored.
pub fn subsample_task(
    dataset: &Dataset,
    classes: Option<usize>,
    ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!(
            "ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let (candidates, task) = match (dataset.task(), classes, dataset.labels()) {
        (TaskKind::Classification { classes: total }, Some(c), Some(Labels::Classes(v))) => {
            if c > total || c < 2 {
                return Err(Error::invalid(format!(
                    "class count {c} must lie in [2, {total}]"
                )));
            }
            let rows: Vec<usize> = (0..v.len()).filter(|&i| v[i] < c).collect();
            (rows, TaskKind::Classification { classes: c })
        }
        (TaskKind::Classification { .. }, Some(_), _) => {
            return Err(Error::invalid("class filter needs class labels"));
        }
        (task, _, _) => ((0..dataset.n_samples()).collect(), task),
    };
    if candidates.is_empty() {
        return Err(Error::invalid("subsampled dataset is empty"));
    }
    let keep = ((ratio * candidates.len() as f64) - 1e-9)
        .ceil()
        .clamp(1.0, candidates.len() as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), keep)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    let mut out = dataset.select_rows(&picked);
    out.task = task;
    out.name = match classes.filter(|_| task.is_classification()) {
        Some(c) => format!("{}[c={c},r={ratio}]", dataset.name),
        None => format!("{}[r={ratio}]", dataset.name),
    };
    Ok(out)
}
