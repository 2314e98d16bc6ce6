//! Transfer decisions and their evaluation.
//!
//! The score of a task is the bound on the transferred risk minus the risk of
//! a target-only model; transfer is recommended when it is strictly negative.
//! Ties fall on the non-transfer side everywhere in this module.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bound::BoundReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Transfer,
    NoTransfer,
}

impl Decision {
    pub fn from_score(score: f64) -> Self {
        if score < 0.0 {
            Decision::Transfer
        } else {
            Decision::NoTransfer
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub task_id: String,
    pub tr_score: f64,
    pub decision: Decision,
    pub bound: BoundReport,
    pub risk_without: f64,
    pub empirical_tr: Option<f64>,
    pub empirical_transferable: Option<bool>,
}

impl DecisionRecord {
    pub fn new(task_id: impl Into<String>, bound: BoundReport, risk_without: f64) -> Result<Self> {
        let (tr_score, decision) = wdje_score(&bound, risk_without)?;
        Ok(Self {
            task_id: task_id.into(),
            tr_score,
            decision,
            bound,
            risk_without,
            empirical_tr: None,
            empirical_transferable: None,
        })
    }

    pub fn with_empirical(mut self, empirical_tr: f64) -> Self {
        self.empirical_tr = Some(empirical_tr);
        self.empirical_transferable = Some(empirical_tr < 0.0);
        self
    }
}

/// `bound.total - risk_without` and the decision it implies.
pub fn wdje_score(bound: &BoundReport, risk_without: f64) -> Result<(f64, Decision)> {
    score_from_total(bound.total, risk_without)
}

/// [`wdje_score`] for a bare bound total.
pub fn score_from_total(bound_total: f64, risk_without: f64) -> Result<(f64, Decision)> {
    if !(risk_without >= 0.0) || !risk_without.is_finite() {
        return Err(Error::invalid(format!(
            "risk without transfer must be finite and >= 0, got {risk_without}"
        )));
    }
    let tr = bound_total - risk_without;
    Ok((tr, Decision::from_score(tr)))
}

/// Observed loss after transfer minus observed loss of the target-only model.
pub fn empirical_transferability(
    loss_with_transfer: f64,
    loss_without_transfer: f64,
) -> Result<f64> {
    for (name, v) in [
        ("loss with transfer", loss_with_transfer),
        ("loss without transfer", loss_without_transfer),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    Ok(loss_with_transfer - loss_without_transfer)
}

/// Counts keyed by (empirical sign, predicted sign); `+` means `>= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_pp: usize,
    pub n_pm: usize,
    pub n_mp: usize,
    pub n_mm: usize,
    /// Pairs where either score was exactly zero (already binned on the `+` side).
    pub ties: usize,
}

impl ConfusionMatrix {
    pub fn from_counts(n_pp: usize, n_pm: usize, n_mp: usize, n_mm: usize) -> Self {
        Self {
            n_pp,
            n_pm,
            n_mp,
            n_mm,
            ties: 0,
        }
    }

    pub fn total(&self) -> usize {
        self.n_pp + self.n_pm + self.n_mp + self.n_mm
    }

    /// Adds one (empirical, predicted) score pair.
    pub fn add(&mut self, empirical: f64, predicted: f64) {
        if empirical == 0.0 || predicted == 0.0 {
            self.ties += 1;
        }
        match (empirical < 0.0, predicted < 0.0) {
            (false, false) => self.n_pp += 1,
            (false, true) => self.n_pm += 1,
            (true, false) => self.n_mp += 1,
            (true, true) => self.n_mm += 1,
        }
    }
}

pub fn confusion_matrix(records: &[DecisionRecord]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::default();
    for r in records {
        let empirical = r.empirical_tr.ok_or_else(|| {
            Error::invalid(format!(
                "record {} has no empirical transferability",
                r.task_id
            ))
        })?;
        cm.add(empirical, r.tr_score);
    }
    Ok(cm)
}

/// A ratio that may be undefined (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: Option<f64>,
    pub undefined: bool,
}

impl Ratio {
    pub fn of(numerator: usize, denominator: usize) -> Self {
        if denominator == 0 {
            Self {
                value: None,
                undefined: true,
            }
        } else {
            Self {
                value: Some(numerator as f64 / denominator as f64),
                undefined: false,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    /// `N_mm / (N_pm + N_mm)`: share of recommended transfers that paid off.
    pub ci_definition: Ratio,
    /// `N_mm / (N_mp + N_mm)`: share of beneficial transfers that were recommended.
    pub ci_table: Ratio,
}

pub fn consistency_index(cm: &ConfusionMatrix) -> ConsistencyResult {
    ConsistencyResult {
        ci_definition: Ratio::of(cm.n_mm, cm.n_pm + cm.n_mm),
        ci_table: Ratio::of(cm.n_mm, cm.n_mp + cm.n_mm),
    }
}

pub const RECORD_CSV_HEADER: [&str; 8] = [
    "task_id",
    "tr_score",
    "decision",
    "bound_total",
    "risk_without",
    "empirical_tr",
    "empirical_transferable",
    "mode",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per record.
pub fn write_records_csv<W: Write>(records: &[DecisionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Malformed(e.to_string());
    w.write_record(RECORD_CSV_HEADER).map_err(wrap)?;
    for r in records {
        let decision = match r.decision {
            Decision::Transfer => "transfer",
            Decision::NoTransfer => "no_transfer",
        };
        let mode = match r.bound.mode {
            crate::bound::BoundMode::Supervised => "supervised",
            crate::bound::BoundMode::Unsupervised => "unsupervised",
        };
        w.write_record([
            r.task_id.clone(),
            r.tr_score.to_string(),
            decision.to_string(),
            r.bound.total.to_string(),
            r.risk_without.to_string(),
            opt(r.empirical_tr),
            opt(r.empirical_transferable),
            mode.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::Malformed(e.to_string()))
}
