use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Dataset, Labels, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MultinomialLogistic,
    Ridge,
}

impl ModelKind {
    pub fn for_task(task: TaskKind) -> Self {
        if task.is_classification() {
            ModelKind::MultinomialLogistic
        } else {
            ModelKind::Ridge
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Rows per gradient step, taken in order; `None` means full batch.
    pub batch_size: Option<usize>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 100,
            l2: 0.0,
            batch_size: None,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return Err(Error::invalid(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Affine model `x -> W^T x + b`. Logistic models have one output per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: ModelKind,
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LinearModel {
    pub fn zeros(kind: ModelKind, dim: usize, outputs: usize) -> Self {
        Self {
            kind,
            weights: DMatrix::zeros(dim, outputs),
            bias: DVector::zeros(outputs),
        }
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weights;
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        z
    }

    /// Row-wise softmax probabilities (logistic) or predictions (ridge, one column).
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.scores(x);
        if self.kind == ModelKind::MultinomialLogistic {
            for mut row in z.row_iter_mut() {
                let max = row.max();
                row.apply(|v| *v = (*v - max).exp());
                let s = row.sum();
                row /= s;
            }
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Risk {
    /// Mean cross-entropy (logistic) or mean squared error (ridge).
    pub loss: f64,
    pub accuracy: Option<f64>,
}

fn check_task(model: &LinearModel, data: &Dataset) -> Result<()> {
    if model.weights.nrows() != data.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} features, dataset {} has {}",
            model.weights.nrows(),
            data.name(),
            data.n_features()
        )));
    }
    match (model.kind, data.labels(), data.task()) {
        (
            ModelKind::MultinomialLogistic,
            Some(Labels::Classes(_)),
            TaskKind::Classification { classes },
        ) if classes == model.outputs() => Ok(()),
        (
            ModelKind::MultinomialLogistic,
            Some(Labels::Classes(_)),
            TaskKind::Classification { classes },
        ) => Err(Error::DimensionMismatch(format!(
            "model has {} classes, dataset {} has {classes}",
            model.outputs(),
            data.name()
        ))),
        (ModelKind::Ridge, Some(Labels::Values(_)), _) => Ok(()),
        (_, None, _) => Err(Error::invalid(format!(
            "dataset {} has no labels",
            data.name()
        ))),
        _ => Err(Error::invalid(format!(
            "{:?} does not fit the task of dataset {}",
            model.kind,
            data.name()
        ))),
    }
}

/// Loss of `model` on the labelled rows of `data`.
pub fn evaluate(model: &LinearModel, data: &Dataset) -> Result<Risk> {
    check_task(model, data)?;
    let n = data.n_samples();
    if n == 0 {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let z = model.scores(data.features());
    match data.labels() {
        Some(Labels::Classes(y)) => {
            let mut loss = 0.0;
            let mut correct = 0usize;
            for (i, &c) in y.iter().enumerate() {
                let row = z.row(i);
                let max = row.max();
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - z[(i, c)];
                if row
                    .iter()
                    .enumerate()
                    .all(|(k, &v)| v < z[(i, c)] || (v == z[(i, c)] && k >= c))
                {
                    correct += 1;
                }
            }
            Ok(Risk {
                loss: loss / n as f64,
                accuracy: Some(correct as f64 / n as f64),
            })
        }
        Some(Labels::Values(y)) => {
            let loss = y
                .iter()
                .enumerate()
                .map(|(i, t)| (z[(i, 0)] - t).powi(2))
                .sum::<f64>()
                / n as f64;
            Ok(Risk {
                loss,
                accuracy: None,
            })
        }
        None => unreachable!("checked above"),
    }
}

/// Targets as a matrix matching the model outputs (one-hot or a single column).
fn target_matrix(model: &LinearModel, labels: &Labels) -> DMatrix<f64> {
    match labels {
        Labels::Classes(y) => {
            DMatrix::from_fn(
                y.len(),
                model.outputs(),
                |i, k| if y[i] == k { 1.0 } else { 0.0 },
            )
        }
        Labels::Values(y) => DMatrix::from_column_slice(y.len(), 1, y),
    }
}

/// Gradient descent starting from `model`. Cross-entropy for logistic
/// models, squared error for ridge.
pub fn gradient_descent(
    mut model: LinearModel,
    data: &Dataset,
    hyper: &TrainHyper,
) -> Result<LinearModel> {
    hyper.validate()?;
    check_task(&model, data)?;
    let n = data.n_samples();
    if n == 0 {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let x = data.features();
    let t = target_matrix(&model, data.labels().expect("checked"));
    let batch = hyper.batch_size.unwrap_or(n).min(n);
    // Squared error gradient carries a factor 2.
    let scale = if model.kind == ModelKind::Ridge {
        2.0
    } else {
        1.0
    };
    for epoch in 0..hyper.epochs {
        let mut start = 0;
        while start < n {
            let len = batch.min(n - start);
            let xb = x.rows(start, len);
            let residual = model.predict(&xb.into_owned()) - t.rows(start, len);
            let grad_w =
                xb.transpose() * &residual * (scale / len as f64) + &model.weights * hyper.l2;
            let grad_b = residual.row_sum().transpose() * (scale / len as f64);
            model.weights -= grad_w * hyper.learning_rate;
            model.bias -= grad_b * hyper.learning_rate;
            start += len;
        }
        if model
            .weights
            .iter()
            .chain(model.bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numerical(format!(
                "training diverged at epoch {epoch}; lower learning_rate (now {})",
                hyper.learning_rate
            )));
        }
    }
    Ok(model)
}

/// Least squares on `[X 1]` with an L2 penalty on the weights only.
fn ridge_closed_form(data: &Dataset, l2: f64) -> Result<LinearModel> {
    let Some(Labels::Values(y)) = data.labels() else {
        return Err(Error::invalid("ridge needs real-valued labels"));
    };
    let (n, d) = (data.n_samples(), data.n_features());
    let penalty = if l2 > 0.0 { d } else { 0 };
    let mut a = DMatrix::zeros(n + penalty, d + 1);
    let mut b = DVector::zeros(n + penalty);
    a.view_mut((0, 0), (n, d)).copy_from(data.features());
    a.view_mut((0, d), (n, 1)).fill(1.0);
    b.rows_mut(0, n).copy_from_slice(y);
    for j in 0..penalty {
        a[(n + j, j)] = l2.sqrt();
    }
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Numerical(format!("ridge solve failed: {e}")))?;
    Ok(LinearModel {
        kind: ModelKind::Ridge,
        weights: DMatrix::from_column_slice(d, 1, &sol.as_slice()[..d]),
        bias: DVector::from_element(1, sol[d]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub risk: Risk,
    pub model: LinearModel,
}

fn fit(data: &Dataset, kind: ModelKind, hyper: &TrainHyper) -> Result<LinearModel> {
    hyper.validate()?;
    match kind {
        ModelKind::MultinomialLogistic => {
            let classes = data.task().classes().ok_or_else(|| {
                Error::invalid("multinomial logistic model needs a classification task")
            })?;
            gradient_descent(
                LinearModel::zeros(kind, data.n_features(), classes),
                data,
                hyper,
            )
        }
        ModelKind::Ridge => ridge_closed_form(data, hyper.l2),
    }
}

/// Trains from zero on the target only and reports its training risk.
pub fn train_target_baseline(
    target: &Dataset,
    kind: ModelKind,
    hyper: &TrainHyper,
) -> Result<TrainOutcome> {
    let model = fit(target, kind, hyper)?;
    Ok(TrainOutcome {
        risk: evaluate(&model, target)?,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferOutcome {
    pub risk_with: Risk,
    pub source_risk: Risk,
    /// Model after the source fit, before any target step.
    pub source_model: LinearModel,
    pub model: LinearModel,
}

/// Fits on the source, then continues gradient descent on the target.
pub fn train_transfer_baseline(
    source: &Dataset,
    target: &Dataset,
    kind: ModelKind,
    source_hyper: &TrainHyper,
    continuation: &TrainHyper,
) -> Result<TransferOutcome> {
    if source.n_features() != target.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} features, target has {}",
            source.n_features(),
            target.n_features()
        )));
    }
    if source.task() != target.task() {
        return Err(Error::DimensionMismatch(format!(
            "label spaces differ: {:?} vs {:?}",
            source.task(),
            target.task()
        )));
    }
    let source_model = fit(source, kind, source_hyper)?;
    let source_risk = evaluate(&source_model, source)?;
    let model = gradient_descent(source_model.clone(), target, continuation)?;
    Ok(TransferOutcome {
        risk_with: evaluate(&model, target)?,
        source_risk,
        source_model,
        model,
    })
}
