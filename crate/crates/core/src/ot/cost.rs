use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GroundMetric {
    Euclidean,
    SquaredEuclidean,
    /// Sum of absolute coordinate differences; `|x - y|` on scalars.
    Absolute,
    /// 0 for identical points, 1 otherwise.
    ZeroOne,
}

impl GroundMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| x - y);
        match self {
            GroundMetric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            GroundMetric::SquaredEuclidean => diffs.map(|d| d * d).sum(),
            GroundMetric::Absolute => diffs.map(f64::abs).sum(),
            GroundMetric::ZeroOne => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// Pairwise transport costs `metric(u_i, v_j)^power`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub values: DMatrix<f64>,
    pub metric: GroundMetric,
    pub power: f64,
}

impl CostMatrix {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.mean()
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }
}

/// Row count above which cost rows are filled in parallel.
const PARALLEL_ROWS: usize = 64;

pub fn ground_cost(
    u: &DiscreteMeasure,
    v: &DiscreteMeasure,
    metric: GroundMetric,
    p: f64,
) -> Result<CostMatrix> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid(format!("order p must be >= 1, got {p}")));
    }
    if u.is_empty() || v.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch(format!(
            "support dimensions differ: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let (n, m) = (u.len(), v.len());
    let rows_u: Vec<Vec<f64>> = (0..n)
        .map(|i| u.points().row(i).iter().copied().collect())
        .collect();
    let rows_v: Vec<Vec<f64>> = (0..m)
        .map(|j| v.points().row(j).iter().copied().collect())
        .collect();
    let exec = if n >= PARALLEL_ROWS {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let filled = par::map_slice(&rows_u, exec, |a| {
        rows_v
            .iter()
            .map(|b| {
                let d = metric.distance(a, b);
                if p == 1.0 {
                    d
                } else {
                    d.powf(p)
                }
            })
            .collect::<Vec<f64>>()
    });
    let values = DMatrix::from_fn(n, m, |i, j| filled[i][j]);
    Ok(CostMatrix {
        values,
        metric,
        power: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure(rows: &[&[f64]]) -> DiscreteMeasure {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DiscreteMeasure::uniform(DMatrix::from_row_slice(rows.len(), d, &flat)).unwrap()
    }

    #[test]
    fn absolute_scalar_costs() {
        let c = ground_cost(
            &measure(&[&[0.0], &[1.0]]),
            &measure(&[&[1.0]]),
            GroundMetric::Absolute,
            1.0,
        )
        .unwrap();
        assert_eq!(c.values, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
    }

    #[test]
    fn euclidean_triangle() {
        let c = ground_cost(
            &measure(&[&[0.0, 0.0]]),
            &measure(&[&[3.0, 4.0]]),
            GroundMetric::Euclidean,
            1.0,
        )
        .unwrap();
        assert_eq!(c.values[(0, 0)], 5.0);
        let c = ground_cost(
            &measure(&[&[0.0, 0.0]]),
            &measure(&[&[3.0, 4.0]]),
            GroundMetric::Euclidean,
            2.0,
        )
        .unwrap();
        assert!((c.values[(0, 0)] - 25.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_distance_is_sqrt2() {
        let c = ground_cost(
            &measure(&[&[1.0, 0.0]]),
            &measure(&[&[0.0, 1.0]]),
            GroundMetric::Euclidean,
            1.0,
        )
        .unwrap();
        assert!((c.values[(0, 0)] - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn zero_one_compares_points() {
        let c = ground_cost(
            &measure(&[&[1.0, 0.0], &[0.0, 1.0]]),
            &measure(&[&[0.0, 1.0]]),
            GroundMetric::ZeroOne,
            1.0,
        )
        .unwrap();
        assert_eq!(c.values.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = measure(&[&[0.0]]);
        let b = measure(&[&[0.0, 1.0]]);
        assert!(matches!(
            ground_cost(&a, &b, GroundMetric::Euclidean, 1.0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(ground_cost(&a, &a, GroundMetric::Euclidean, 0.5).is_err());
        assert!(matches!(
            ground_cost(&DiscreteMeasure::empty(1), &a, GroundMetric::Euclidean, 1.0),
            Err(Error::EmptyMeasure)
        ));
    }
}
