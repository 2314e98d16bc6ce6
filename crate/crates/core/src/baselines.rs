//! Analytical transferability metrics used for comparison, plus Pearson
//! correlation for evaluating any metric against observed losses.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, pinv_symmetric};
use crate::measures::TaskKind;

/// Softmax outputs of a source model on target samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePredictions {
    probs: DMatrix<f64>,
    pseudo_labels: Vec<usize>,
}

impl SourcePredictions {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for (i, row) in probs.row_iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::invalid(format!(
                    "prediction row {i} has a negative or non-finite entry"
                )));
            }
            let s = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "prediction row {i} sums to {s}, not 1"
                )));
            }
        }
        let pseudo_labels = probs
            .row_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &p)| {
                        if p > best.1 {
                            (j, p)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect();
        Ok(Self {
            probs,
            pseudo_labels,
        })
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// Row-wise argmax, first index on ties.
    pub fn pseudo_labels(&self) -> &[usize] {
        &self.pseudo_labels
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }
}

/// Log expected empirical prediction.
///
/// Builds the joint `P(y, z)` from soft source predictions, turns it into
/// `P(y | z)`, and averages `log sum_z P(y_i | z) theta_z(x_i)`.
pub fn leep(preds: &SourcePredictions, labels: &[usize], classes: usize) -> Result<f64> {
    let n = preds.len();
    if n == 0 {
        return Err(Error::invalid("LEEP needs at least one sample"));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} predictions but {} labels",
            labels.len()
        )));
    }
    if classes < 2 {
        return Err(Error::invalid("LEEP needs at least 2 target classes"));
    }
    if let Some((row, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::LabelOutOfRange {
            row,
            label: y as f64,
            classes,
        });
    }
    let z_count = preds.probs.ncols();
    let mut joint = DMatrix::<f64>::zeros(classes, z_count);
    for (i, &y) in labels.iter().enumerate() {
        for z in 0..z_count {
            joint[(y, z)] += preds.probs[(i, z)] / n as f64;
        }
    }
    let marginal_z: Vec<f64> = (0..z_count).map(|z| joint.column(z).sum()).collect();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let eep: f64 = (0..z_count)
            .filter(|&z| marginal_z[z] > 0.0)
            .map(|z| joint[(y, z)] / marginal_z[z] * preds.probs[(i, z)])
            .sum();
        total += eep.ln();
    }
    Ok((total / n as f64).min(0.0))
}

/// Negative conditional entropy `-H(Y | Z)` of target labels given source pseudo-labels.
pub fn nce(source_labels: &[usize], target_labels: &[usize]) -> Result<f64> {
    let n = source_labels.len();
    if n == 0 {
        return Err(Error::invalid("NCE needs at least one sample"));
    }
    if target_labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} source labels but {} target labels",
            target_labels.len()
        )));
    }
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut marginal: BTreeMap<usize, usize> = BTreeMap::new();
    for (&z, &y) in source_labels.iter().zip(target_labels) {
        *joint.entry((y, z)).or_default() += 1;
        *marginal.entry(z).or_default() += 1;
    }
    let h: f64 = joint
        .iter()
        .map(|(&(_, z), &count)| {
            let p_yz = count as f64 / n as f64;
            let p_z = marginal[&z] as f64 / n as f64;
            -p_yz * (p_yz / p_z).ln()
        })
        .sum();
    Ok(-h.max(0.0))
}

/// Box for the LogME precision parameters `alpha` and `beta`.
pub const LOGME_PRECISION_RANGE: (f64, f64) = (1e-6, 1e6);
pub const LOGME_TOL: f64 = 1e-6;
pub const LOGME_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMeScore {
    pub value: f64,
    pub converged: bool,
}

/// Log-evidence of `y` under a Bayesian linear model on the SVD of the
/// features, divided by `n`.
struct SpectralTarget<'a> {
    /// Squared singular values.
    sigma: &'a [f64],
    /// Projections of `y` on the left singular vectors.
    proj2: Vec<f64>,
    /// Part of `|y|^2` outside the column space.
    residual: f64,
    n: f64,
    dim: f64,
}

impl SpectralTarget<'_> {
    fn evidence(&self, alpha: f64, beta: f64) -> (f64, f64, f64, f64) {
        let t = alpha / beta;
        let mut gamma = 0.0;
        let mut m2 = 0.0;
        let mut res2 = self.residual;
        let mut log_det = (self.dim - self.sigma.len() as f64) * alpha.ln();
        for (&s, &x2) in self.sigma.iter().zip(&self.proj2) {
            gamma += s / (t + s);
            m2 += s * x2 / ((t + s) * (t + s));
            res2 += x2 * (t / (t + s)) * (t / (t + s));
            log_det += (alpha + beta * s).ln();
        }
        let ev = 0.5 * self.dim * alpha.ln() + 0.5 * self.n * beta.ln()
            - 0.5 * log_det
            - 0.5 * beta * res2
            - 0.5 * alpha * m2
            - 0.5 * self.n * (2.0 * PI).ln();
        (ev / self.n, gamma, m2, res2)
    }

    fn maximize(&self) -> (f64, bool) {
        let (lo, hi) = LOGME_PRECISION_RANGE;
        let clamp = |v: f64| if v.is_nan() { hi } else { v.clamp(lo, hi) };
        let (mut alpha, mut beta) = (1.0, 1.0);
        let (mut ev, _, _, _) = self.evidence(alpha, beta);
        for _ in 0..LOGME_MAX_ITER {
            let (_, gamma, m2, res2) = self.evidence(alpha, beta);
            alpha = clamp(gamma / m2);
            beta = clamp((self.n - gamma) / res2);
            let (next, _, _, _) = self.evidence(alpha, beta);
            let delta = (next - ev).abs();
            ev = next;
            if delta <= LOGME_TOL {
                return (ev, true);
            }
        }
        (ev, false)
    }
}

/// LogME: mean maximized per-sample log evidence across output dimensions.
///
/// Classification targets are expanded one-vs-rest; regression uses `y`
/// as a single output. `alpha` and `beta` are kept inside
/// [`LOGME_PRECISION_RANGE`], which bounds the evidence when `y` lies in the
/// span of the features.
pub fn logme(features: &DMatrix<f64>, labels: &[f64], task: TaskKind) -> Result<LogMeScore> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::invalid("LogME needs at least 2 samples"));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    let targets: Vec<DVector<f64>> = match task {
        TaskKind::Regression => {
            if labels.iter().all(|&y| y == labels[0]) {
                return Err(Error::invalid(
                    "LogME on constant regression targets is degenerate",
                ));
            }
            vec![DVector::from_column_slice(labels)]
        }
        TaskKind::Classification { classes } => (0..classes)
            .map(|c| {
                DVector::from_iterator(
                    n,
                    labels
                        .iter()
                        .map(|&y| if y as usize == c { 1.0 } else { 0.0 }),
                )
            })
            .collect(),
    };
    let svd = features.clone().svd(true, false);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let sigma: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
    let mut total = 0.0;
    let mut converged = true;
    for y in &targets {
        let proj = u.transpose() * y;
        let proj2: Vec<f64> = proj.iter().map(|x| x * x).collect();
        let residual = (y.norm_squared() - proj2.iter().sum::<f64>()).max(0.0);
        let target = SpectralTarget {
            sigma: &sigma,
            proj2,
            residual,
            n: n as f64,
            dim: features.ncols() as f64,
        };
        let (ev, ok) = target.maximize();
        total += ev;
        converged &= ok;
    }
    if !converged {
        log::warn!("LogME fixed point did not converge in {LOGME_MAX_ITER} iterations");
    }
    Ok(LogMeScore {
        value: total / targets.len() as f64,
        converged,
    })
}

/// Relative singular-value cutoff for the H-score pseudo-inverse.
pub const HSCORE_CUTOFF: f64 = 1e-10;

/// `tr(pinv(cov(F)) cov(E[F | y]))` on centered features.
pub fn hscore(features: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        groups.entry(y).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::invalid("H-score needs at least two classes"));
    }
    let centered = center_columns(features);
    let cov_f = centered.transpose() * &centered / n as f64;
    let d = features.ncols();
    let mut cov_g = DMatrix::<f64>::zeros(d, d);
    for rows in groups.values() {
        let mean = DVector::from_iterator(
            d,
            (0..d).map(|j| rows.iter().map(|&i| centered[(i, j)]).sum::<f64>() / rows.len() as f64),
        );
        cov_g += &mean * mean.transpose() * (rows.len() as f64 / n as f64);
    }
    let pinv = pinv_symmetric(&cov_f, HSCORE_CUTOFF);
    Ok((pinv * cov_g).trace())
}

/// Sample Pearson correlation. Zero variance in either input is an error.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::invalid("Pearson correlation needs at least 3 pairs"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::invalid("correlation undefined: zero variance"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leep_perfect_and_hand_cases() {
        let preds = SourcePredictions::new(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        ))
        .unwrap();
        assert_eq!(leep(&preds, &[0, 1, 2], 3).unwrap(), 0.0);

        let preds =
            SourcePredictions::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0])).unwrap();
        assert!((leep(&preds, &[0, 1], 2).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert!(leep(&preds, &[0, 2], 2).is_err());
    }

    #[test]
    fn predictions_are_validated() {
        assert!(SourcePredictions::new(DMatrix::from_row_slice(1, 2, &[0.6, 0.6])).is_err());
        assert!(SourcePredictions::new(DMatrix::from_row_slice(1, 2, &[-0.5, 1.5])).is_err());
        let p =
            SourcePredictions::new(DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.5, 0.5])).unwrap();
        assert_eq!(p.pseudo_labels(), &[1, 0]);
    }

    #[test]
    fn nce_cases() {
        assert_eq!(nce(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap(), 0.0);
        assert!((nce(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert!(nce(&[], &[]).is_err());
    }

    #[test]
    fn hscore_cases() {
        // Class means coincide: zero between-class covariance.
        let f = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        assert!(hscore(&f, &[0, 0, 1, 1]).unwrap().abs() < 1e-9);

        // Features equal to the one-hot labels.
        let labels = [0, 1, 2, 0, 1, 2];
        let f = DMatrix::from_fn(6, 3, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
        assert!((hscore(&f, &labels).unwrap() - 2.0).abs() < 1e-9);

        assert!(hscore(&f, &[0; 6]).is_err());
    }

    #[test]
    fn pearson_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let expected = 3.0 / (2.0f64 * 14.0 / 3.0).sqrt();
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.9820).abs() < 1e-4);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn logme_is_finite_and_flags_constant_targets() {
        let f = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 0.2, -1.0, -0.7, 0.3, 0.0, 1.1]);
        let s = logme(
            &f,
            &[0.0, 1.0, 1.0, 0.0],
            TaskKind::Classification { classes: 2 },
        )
        .unwrap();
        assert!(s.value.is_finite());
        assert!(logme(&f, &[2.0; 4], TaskKind::Regression).is_err());
        assert!(logme(&DMatrix::zeros(1, 2), &[1.0], TaskKind::Regression).is_err());
    }
}
