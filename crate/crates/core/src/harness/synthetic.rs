use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Dataset, Labels, TaskKind};

/// How target labels differ from source labels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelShift {
    #[default]
    None,
    /// Added to every target output (regression).
    Additive(f64),
    /// Target label of a sample drawn from class `k` is `perm[k]` (classification).
    Permutation(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub task_kind: TaskKind,
    pub feature_dim: usize,
    pub samples_per_domain: usize,
    /// Translation of every target input along the first axis.
    pub mean_shift: f64,
    pub label_shift: LabelShift,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            task_kind: TaskKind::Classification { classes: 4 },
            feature_dim: 8,
            samples_per_domain: 200,
            mean_shift: 0.0,
            label_shift: LabelShift::None,
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.samples_per_domain == 0 {
            return Err(Error::invalid(
                "feature_dim and samples_per_domain must be >= 1",
            ));
        }
        if let TaskKind::Classification { classes } = self.task_kind {
            if classes < 2 {
                return Err(Error::invalid(format!(
                    "need at least 2 classes, got {classes}"
                )));
            }
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid(format!(
                "noise_sigma must be > 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.mean_shift >= 0.0) || !self.mean_shift.is_finite() {
            return Err(Error::invalid(format!(
                "mean_shift must be >= 0, got {}",
                self.mean_shift
            )));
        }
        match (&self.label_shift, self.task_kind) {
            (LabelShift::None, _) => Ok(()),
            (LabelShift::Additive(s), TaskKind::Regression) if s.is_finite() => Ok(()),
            (LabelShift::Additive(_), TaskKind::Regression) => {
                Err(Error::invalid("label shift must be finite"))
            }
            (LabelShift::Permutation(perm), TaskKind::Classification { classes }) => {
                let mut seen = vec![false; classes];
                if perm.len() != classes
                    || !perm
                        .iter()
                        .all(|&k| k < classes && !std::mem::replace(&mut seen[k], true))
                {
                    return Err(Error::invalid(format!(
                        "label permutation must reorder 0..{classes}"
                    )));
                }
                Ok(())
            }
            (LabelShift::Additive(_), _) => Err(Error::invalid(
                "additive label shift needs a regression task",
            )),
            (LabelShift::Permutation(_), _) => Err(Error::invalid(
                "label permutation needs a classification task",
            )),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws a source/target pair.
///
/// Classification: sample `i` belongs to class `i mod C`; class centers sit
/// at `k - (C-1)/2` on the first axis with isotropic Gaussian noise. Target
/// inputs are translated by `mean_shift` along the first axis.
///
/// Regression: `x ~ N(0, I)`, `y = w.x + noise` with a seeded `w`; target
/// inputs are translated the same way and outputs get the additive shift.
///
/// Source and target use separate random streams of `seed`, so changing
/// `mean_shift` keeps the underlying noise fixed.
pub fn gen_synthetic_pair(config: &SyntheticConfig) -> Result<(Dataset, Dataset)> {
    config.validate()?;
    let (n, d) = (config.samples_per_domain, config.feature_dim);
    let sigma = config.noise_sigma;
    match config.task_kind {
        TaskKind::Classification { classes } => {
            let perm: Vec<usize> = match &config.label_shift {
                LabelShift::Permutation(p) => p.clone(),
                _ => (0..classes).collect(),
            };
            let center = |k: usize| k as f64 - (classes as f64 - 1.0) / 2.0;
            let draw = |rng: &mut ChaCha8Rng, shift: f64| {
                let mut x = DMatrix::zeros(n, d);
                for i in 0..n {
                    for j in 0..d {
                        x[(i, j)] = sigma * normal(rng);
                    }
                    x[(i, 0)] += center(i % classes) + shift;
                }
                x
            };
            let xs = draw(&mut stream(config.seed, 0), 0.0);
            let xt = draw(&mut stream(config.seed, 1), config.mean_shift);
            let task = config.task_kind;
            let ys = Labels::Classes((0..n).map(|i| i % classes).collect());
            let yt = Labels::Classes((0..n).map(|i| perm[i % classes]).collect());
            Ok((
                Dataset::new("synthetic-source", xs, Some(ys), task)?,
                Dataset::new("synthetic-target", xt, Some(yt), task)?,
            ))
        }
        TaskKind::Regression => {
            let mut wrng = stream(config.seed, 2);
            let w: Vec<f64> = (0..d)
                .map(|_| normal(&mut wrng) / (d as f64).sqrt())
                .collect();
            let offset = match config.label_shift {
                LabelShift::Additive(s) => s,
                _ => 0.0,
            };
            let draw = |rng: &mut ChaCha8Rng, shift: f64, offset: f64| {
                let mut x = DMatrix::zeros(n, d);
                let mut y = Vec::with_capacity(n);
                for i in 0..n {
                    for j in 0..d {
                        x[(i, j)] = normal(rng);
                    }
                    x[(i, 0)] += shift;
                    let clean: f64 = (0..d).map(|j| w[j] * x[(i, j)]).sum();
                    y.push(clean + sigma * normal(rng) + offset);
                }
                (x, Labels::Values(y))
            };
            let (xs, ys) = draw(&mut stream(config.seed, 0), 0.0, 0.0);
            let (xt, yt) = draw(&mut stream(config.seed, 1), config.mean_shift, offset);
            Ok((
                Dataset::new("synthetic-source", xs, Some(ys), TaskKind::Regression)?,
                Dataset::new("synthetic-target", xt, Some(yt), TaskKind::Regression)?,
            ))
        }
    }
}
