//! Target-risk upper bound.
//!
//! The bound adds five nonnegative terms:
//!
//! ```text
//! total = source_risk + k*lambda*W_x + W_y(S1, T) + E_{S2}[|y|^p]^(1/p) + k*M*phi(lambda)
//! ```
//!
//! with `lambda = k_lambda_product / k` and `phi(lambda) = exp(-lambda)`.
//! Without labelled target data the label distance drops out and the moment
//! is taken over all source labels.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::measures::{
    encode_labels, split_source_labels, Dataset, DiscreteMeasure, EncodingMode, LabelEncoding,
    Labels,
};
use crate::ot::{wasserstein, GroundMetric, OtConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub loss: Loss,
    pub k_lambda_product: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub p: f64,
    /// Supremum of the regressor weights; only used by the MSE recipe.
    #[serde(rename = "K_weight_sup")]
    pub k_weight_sup: f64,
    pub label_encoding: LabelEncoding,
    /// Positive floor applied when the MSE recipe yields `k <= 0`.
    pub lipschitz_floor: f64,
}

impl BoundConfig {
    pub fn new(loss: Loss, label_encoding: LabelEncoding) -> Self {
        Self {
            loss,
            k_lambda_product: 0.001,
            m: 1.0,
            p: 1.0,
            k_weight_sup: 1.0,
            label_encoding,
            lipschitz_floor: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_lambda_product", self.k_lambda_product),
            ("M", self.m),
            ("K_weight_sup", self.k_weight_sup),
            ("lipschitz_floor", self.lipschitz_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::invalid(format!("p must be >= 1, got {}", self.p)));
        }
        self.label_encoding.validate()
    }
}

/// A Lipschitz constant with the quantities it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub k: f64,
    /// Formula value before any clamping.
    pub raw: f64,
    /// Matrix norm that entered the formula.
    pub norm: f64,
    pub clamped: bool,
    /// Set when `k` is zero (all-zero features) and lambda is undefined.
    pub degenerate: bool,
}

/// `k = (c - 1) / (c * N_T) * ||X||_2` for softmax cross-entropy.
pub fn lipschitz_cross_entropy(
    features: &DMatrix<f64>,
    classes: usize,
) -> Result<LipschitzEstimate> {
    if features.nrows() == 0 || features.ncols() == 0 {
        return Err(Error::invalid("empty feature matrix"));
    }
    if classes < 2 {
        return Err(Error::invalid(format!(
            "class count must be >= 2, got {classes}"
        )));
    }
    let norm = spectral_norm(features);
    let k = ((classes - 1) as f64 * norm) / (classes as f64 * features.nrows() as f64);
    let degenerate = k == 0.0;
    if degenerate {
        log::warn!("cross-entropy Lipschitz constant is zero; lambda is undefined");
    }
    Ok(LipschitzEstimate {
        k,
        raw: k,
        norm,
        clamped: false,
        degenerate,
    })
}

/// `k = K / N_t1 * ||X^T X||_2 - 1 / N_t1 * ||y^T X||`, clamped to `floor` when not positive.
pub fn lipschitz_mse(
    features: &DMatrix<f64>,
    targets: &[f64],
    k_weight_sup: f64,
    floor: f64,
) -> Result<LipschitzEstimate> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::invalid("empty labelled target set"));
    }
    if targets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} feature rows but {} targets",
            targets.len()
        )));
    }
    let gram = features.transpose() * features;
    let gram_norm = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    let y = DVector::from_column_slice(targets);
    let cross = (y.transpose() * features).norm();
    let raw = (k_weight_sup * gram_norm - cross) / n as f64;
    let clamped = !(raw > 0.0);
    if clamped {
        log::warn!("MSE Lipschitz formula gave {raw}; clamped to {floor}");
    }
    Ok(LipschitzEstimate {
        k: if clamped { floor } else { raw },
        raw,
        norm: gram_norm,
        clamped,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPhi {
    pub lambda: f64,
    pub phi_lambda: f64,
    /// `exp(-lambda)` underflowed to zero.
    pub underflow: bool,
}

pub fn lambda_and_phi(k: f64, config: &BoundConfig) -> Result<LambdaPhi> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::invalid(format!(
            "Lipschitz constant must be positive, got {k}"
        )));
    }
    let lambda = config.k_lambda_product / k;
    if !lambda.is_finite() {
        return Err(Error::Numerical(format!(
            "lambda = {} / {k} overflowed",
            config.k_lambda_product
        )));
    }
    let phi_lambda = (-lambda).exp();
    Ok(LambdaPhi {
        lambda,
        phi_lambda,
        underflow: phi_lambda == 0.0,
    })
}

/// `(sum_i w_i |y_i|^p)^(1/p)` with Euclidean norms; zero for an empty measure.
pub fn source_label_moment(labels: &DiscreteMeasure, p: f64) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut weighted = 0.0;
    let mut mass = 0.0;
    for (i, row) in labels.points().row_iter().enumerate() {
        let w = labels.weights()[i];
        weighted += w * row.norm().powf(p);
        mass += w;
    }
    // Dividing by the accumulated mass keeps unit-norm labels at exactly 1.
    (weighted / mass).powf(1.0 / p)
}

/// Empirical `q`-th absolute moment `sum_i w_i |x_i|^q`.
pub fn absolute_moment(measure: &DiscreteMeasure, q: f64) -> f64 {
    measure
        .points()
        .row_iter()
        .zip(measure.weights().iter())
        .map(|(row, w)| w * row.norm().powf(q))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    Supervised,
    Unsupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub source_risk: f64,
    pub k: f64,
    pub lambda: f64,
    pub phi_lambda: f64,
    pub domain_term: f64,
    pub task_term_w: f64,
    pub task_term_moment: f64,
    pub slack_term: f64,
    pub total: f64,
    pub mode: BoundMode,
    pub diagnostics: Option<GeneralizationDiagnostics>,
}

impl BoundReport {
    /// Sum of the five reported terms, in the same order used for `total`.
    pub fn term_sum(&self) -> f64 {
        self.source_risk
            + self.domain_term
            + self.task_term_w
            + self.task_term_moment
            + self.slack_term
    }

    pub fn with_diagnostics(mut self, diagnostics: GeneralizationDiagnostics) -> Self {
        self.diagnostics = Some(diagnostics);
        self
    }
}

fn check_nonnegative(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(*v >= 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    Ok(())
}

fn assemble(
    source_risk: f64,
    w_x: f64,
    task_term_w: f64,
    moment: f64,
    k: f64,
    config: &BoundConfig,
    mode: BoundMode,
) -> Result<BoundReport> {
    config.validate()?;
    let LambdaPhi {
        lambda, phi_lambda, ..
    } = lambda_and_phi(k, config)?;
    let domain_term = k * lambda * w_x;
    let slack_term = k * config.m * phi_lambda;
    let mut report = BoundReport {
        source_risk,
        k,
        lambda,
        phi_lambda,
        domain_term,
        task_term_w,
        task_term_moment: moment,
        slack_term,
        total: 0.0,
        mode,
        diagnostics: None,
    };
    report.total = report.term_sum();
    Ok(report)
}

/// Bound with labelled target data: label distance to the paired source
/// labels plus the moment of the unpaired ones.
pub fn target_risk_bound(
    source_risk: f64,
    w_x: f64,
    w_y_s1_t: f64,
    moment_s2: f64,
    k: f64,
    config: &BoundConfig,
) -> Result<BoundReport> {
    check_nonnegative(&[
        ("source_risk", source_risk),
        ("W_x", w_x),
        ("W_y", w_y_s1_t),
        ("moment", moment_s2),
    ])?;
    assemble(
        source_risk,
        w_x,
        w_y_s1_t,
        moment_s2,
        k,
        config,
        BoundMode::Supervised,
    )
}

/// Bound without target labels: the task term is the moment of all source labels.
pub fn target_risk_bound_unsupervised(
    source_risk: f64,
    w_x: f64,
    moment_full_source: f64,
    k: f64,
    config: &BoundConfig,
) -> Result<BoundReport> {
    check_nonnegative(&[
        ("source_risk", source_risk),
        ("W_x", w_x),
        ("moment", moment_full_source),
    ])?;
    assemble(
        source_risk,
        w_x,
        0.0,
        moment_full_source,
        k,
        config,
        BoundMode::Unsupervised,
    )
}

/// Moment of the full source label measure for the unsupervised bound.
pub fn full_source_moment(source: &Dataset, encoding: LabelEncoding, p: f64) -> Result<f64> {
    let labels = source
        .labels()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| Error::invalid("unsupervised bound needs source labels"))?;
    let measure = DiscreteMeasure::uniform(encode_labels(labels, encoding)?)?;
    Ok(source_label_moment(&measure, p))
}

/// Constants for the finite-sample terms. Rademacher complexity, `zeta` and
/// the `q`-moments are supplied by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationInputs {
    pub delta: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "M_S")]
    pub m_s: f64,
    pub rademacher: f64,
    pub zeta: f64,
    pub q: f64,
    pub d: usize,
    /// `M_q` of the source feature distribution.
    pub mq_source_x: f64,
    pub mq_target_x: f64,
    pub mq_s1_y: f64,
    pub mq_target_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingTerms {
    /// `B sqrt(log(1/delta) / 2) (N_S^-1/2 + N_T^-1/2)`
    pub feature_sampling: f64,
    /// `B sqrt(log(1/delta) / (2 sqrt(N_t1)))`
    pub label_sampling: f64,
    pub gamma_x: f64,
    pub gamma_y: f64,
    /// `2 Rademacher + M_S sqrt(log(1/delta) / (2 N_S))`
    pub source_generalization: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationDiagnostics {
    pub inputs: GeneralizationInputs,
    pub p: f64,
    pub n_s: usize,
    pub n_t: usize,
    pub n_t1: usize,
    pub sampling_terms: SamplingTerms,
}

/// Evaluates the finite-sample slack terms. They are reported next to a
/// bound, never added into its total.
///
/// `delta = 1` is accepted and zeroes every logarithmic term.
pub fn generalization_terms(
    inputs: &GeneralizationInputs,
    p: f64,
    n_s: usize,
    n_t: usize,
    n_t1: usize,
) -> Result<GeneralizationDiagnostics> {
    if !(inputs.delta > 0.0 && inputs.delta <= 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, 1], got {}",
            inputs.delta
        )));
    }
    check_nonnegative(&[
        ("B", inputs.b),
        ("M_S", inputs.m_s),
        ("rademacher", inputs.rademacher),
        ("zeta", inputs.zeta),
        ("mq_source_x", inputs.mq_source_x),
        ("mq_target_x", inputs.mq_target_x),
        ("mq_s1_y", inputs.mq_s1_y),
        ("mq_target_y", inputs.mq_target_y),
    ])?;
    if n_s == 0 || n_t == 0 || n_t1 == 0 {
        return Err(Error::invalid("sample counts must be >= 1"));
    }
    let d = inputs.d as f64;
    let q = inputs.q;
    if inputs.d == 0 || !(p > 0.0 && p < d / 2.0) {
        return Err(Error::invalid(format!(
            "p = {p} must lie in (0, d/2) with d = {}",
            inputs.d
        )));
    }
    if !(q > p) {
        return Err(Error::invalid(format!("q = {q} must exceed p = {p}")));
    }
    if inputs.d > 1 && (q - d / (d - p)).abs() < 1e-12 {
        return Err(Error::invalid(format!(
            "q must differ from d/(d-p) = {}",
            d / (d - p)
        )));
    }

    let log_term = (1.0 / inputs.delta).ln();
    let (ns, nt, nt1) = (n_s as f64, n_t as f64, n_t1 as f64);
    let rate = |n: f64| n.powf(-p / d) + n.powf(-(q - p) / q);
    let moment = |m: f64| m.powf(p / q);

    let feature_sampling = inputs.b * (0.5 * log_term).sqrt() * (1.0 / ns.sqrt() + 1.0 / nt.sqrt());
    let label_sampling = inputs.b * (log_term / (2.0 * nt1.sqrt())).sqrt();
    let gamma_x = inputs.zeta
        * (moment(inputs.mq_source_x) * rate(ns) + moment(inputs.mq_target_x) * rate(nt));
    let gamma_y = inputs.zeta * (moment(inputs.mq_s1_y) + moment(inputs.mq_target_y)) * rate(nt1);
    let source_generalization =
        2.0 * inputs.rademacher + inputs.m_s * (log_term / (2.0 * ns)).sqrt();
    let total = feature_sampling + label_sampling + gamma_x + gamma_y + source_generalization;
    Ok(GeneralizationDiagnostics {
        inputs: *inputs,
        p,
        n_s,
        n_t,
        n_t1,
        sampling_terms: SamplingTerms {
            feature_sampling,
            label_sampling,
            gamma_x,
            gamma_y,
            source_generalization,
            total,
        },
    })
}

/// Both sides of `W(S, T) <= W(S1, T) + E_{S2}[|y|^p]^(1/p)` evaluated on
/// empirical label measures. Violations are reported, not raised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskDifferenceCheck {
    pub w_full: f64,
    pub w_s1_t: f64,
    pub moment_s2: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn task_difference_check(
    source: &Dataset,
    target_labels: &DiscreteMeasure,
    n_t1: usize,
    encoding: LabelEncoding,
    ot: &OtConfig,
) -> Result<TaskDifferenceCheck> {
    let config = ot.with_metric(label_metric(encoding));
    let labels = source
        .labels()
        .ok_or_else(|| Error::invalid("source dataset has no labels"))?;
    let full = DiscreteMeasure::uniform(encode_labels(labels, encoding)?)?;
    let (w_full, _) = wasserstein(&full, target_labels, &config)?;
    let (s1, s2) = split_source_labels(source, n_t1, encoding)?;
    let w_s1_t = if s1.is_empty() {
        0.0
    } else {
        wasserstein(&s1, target_labels, &config)?.0
    };
    let moment_s2 = source_label_moment(&s2, config.p);
    let rhs = w_s1_t + moment_s2;
    Ok(TaskDifferenceCheck {
        w_full,
        w_s1_t,
        moment_s2,
        rhs,
        holds: w_full <= rhs + 1e-12,
    })
}

/// Ground metric for label supports: Euclidean on one-hot vectors, absolute on scalars.
pub fn label_metric(encoding: LabelEncoding) -> GroundMetric {
    match encoding.mode {
        EncodingMode::OneHot => GroundMetric::Euclidean,
        EncodingMode::RawScalar => GroundMetric::Absolute,
    }
}

/// Everything produced when the bound is computed from raw datasets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundComputation {
    pub report: BoundReport,
    pub lipschitz: LipschitzEstimate,
    pub w_x: f64,
    pub n_s: usize,
    pub n_t: usize,
    pub n_t1: usize,
}

/// Computes the bound from data.
///
/// The first `n_t1` rows of `target` are treated as labelled. With
/// `n_t1 == 0` the unsupervised form is used. The source split index is
/// capped at the number of source labels.
pub fn bound_from_data(
    source: &Dataset,
    target: &Dataset,
    n_t1: usize,
    source_risk: f64,
    config: &BoundConfig,
    ot: &OtConfig,
) -> Result<BoundComputation> {
    config.validate()?;
    if source.n_features() != target.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} feature columns, target has {}",
            source.n_features(),
            target.n_features()
        )));
    }
    if n_t1 > target.n_samples() {
        return Err(Error::invalid(format!(
            "n_t1 = {n_t1} exceeds the {} target rows",
            target.n_samples()
        )));
    }
    let feature_ot = OtConfig { p: config.p, ..*ot };
    let source_x = DiscreteMeasure::uniform(source.features().clone())?;
    let target_x = DiscreteMeasure::uniform(target.features().clone())?;
    let (w_x, _) = wasserstein(&source_x, &target_x, &feature_ot)?;

    let labelled = target.head(n_t1);
    let lipschitz = match config.loss {
        Loss::CrossEntropy => {
            let classes = target
                .task()
                .classes()
                .ok_or_else(|| Error::invalid("cross-entropy loss needs a classification task"))?;
            lipschitz_cross_entropy(target.features(), classes)?
        }
        Loss::Mse => {
            let y = labelled.labels().map(Labels::as_f64).ok_or_else(|| {
                Error::invalid("MSE Lipschitz constant needs labelled target rows")
            })?;
            lipschitz_mse(
                labelled.features(),
                &y,
                config.k_weight_sup,
                config.lipschitz_floor,
            )?
        }
    };
    if lipschitz.degenerate {
        return Err(Error::Numerical(
            "Lipschitz constant is zero (all-zero target features); lambda is undefined".into(),
        ));
    }

    let report = if n_t1 == 0 {
        let moment = full_source_moment(source, config.label_encoding, config.p)?;
        target_risk_bound_unsupervised(source_risk, w_x, moment, lipschitz.k, config)?
    } else {
        let target_labels = labelled
            .labels()
            .ok_or_else(|| Error::invalid("target rows marked labelled have no labels"))?;
        let target_y =
            DiscreteMeasure::uniform(encode_labels(target_labels, config.label_encoding)?)?;
        let split = n_t1.min(source.n_samples());
        let (s1, s2) = split_source_labels(source, split, config.label_encoding)?;
        let label_ot = OtConfig {
            p: config.p,
            ..ot.with_metric(label_metric(config.label_encoding))
        };
        let (w_y, _) = wasserstein(&s1, &target_y, &label_ot)?;
        let moment = source_label_moment(&s2, config.p);
        target_risk_bound(source_risk, w_x, w_y, moment, lipschitz.k, config)?
    };
    Ok(BoundComputation {
        report,
        lipschitz,
        w_x,
        n_s: source.n_samples(),
        n_t: target.n_samples(),
        n_t1,
    })
}
