//! Entropic transport solved by log-domain Sinkhorn iterations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CostMatrix, Solver, TransportPlan};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl SinkhornParams {
    /// Instance-scaled defaults: epsilon = 0.1 * mean(C), 10 000 iterations, tol 1e-8.
    pub fn for_cost(cost: &CostMatrix) -> Self {
        Self {
            epsilon: 0.1 * cost.mean(),
            max_iter: 10_000,
            tol: 1e-8,
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Alternating dual updates `f_i = eps log a_i - eps LSE_j((g_j - C_ij)/eps)`
/// and the symmetric update for `g`. Atoms with zero weight are left out of
/// the iteration and carry no mass.
///
/// Hitting `max_iter` is not an error: the plan comes back with
/// `converged = false`. The reported objective is `<P, C>` without the entropy.
pub fn sinkhorn(
    u: &DiscreteMeasure,
    v: &DiscreteMeasure,
    cost: &CostMatrix,
    params: SinkhornParams,
) -> Result<TransportPlan> {
    if !(params.epsilon > 0.0) || !params.epsilon.is_finite() {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {}",
            params.epsilon
        )));
    }
    if !(params.tol > 0.0) {
        return Err(Error::invalid(format!(
            "tol must be positive, got {}",
            params.tol
        )));
    }
    if u.is_empty() || v.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let (n, m) = cost.shape();
    if n != u.len() || m != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "cost matrix is {n}x{m}, measures have {} and {} atoms",
            u.len(),
            v.len()
        )));
    }
    let eps = params.epsilon;
    let rows: Vec<usize> = (0..n).filter(|&i| u.weights()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| v.weights()[j] > 0.0).collect();
    let log_a: Vec<f64> = rows.iter().map(|&i| u.weights()[i].ln()).collect();
    let log_b: Vec<f64> = cols.iter().map(|&j| v.weights()[j].ln()).collect();
    let c = DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        cost.values[(rows[i], cols[j])]
    });
    let (nr, nc) = c.shape();

    let mut f = vec![0.0; nr];
    let mut g = vec![0.0; nc];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        iterations += 1;
        for i in 0..nr {
            let lse = log_sum_exp((0..nc).map(|j| (g[j] - c[(i, j)]) / eps));
            f[i] = eps * (log_a[i] - lse);
        }
        for j in 0..nc {
            let lse = log_sum_exp((0..nr).map(|i| (f[i] - c[(i, j)]) / eps));
            g[j] = eps * (log_b[j] - lse);
        }
        if f.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "Sinkhorn scalings became non-finite at epsilon {eps}; increase epsilon relative to the cost scale"
            )));
        }
        // Columns match exactly after the g update; rows carry the residual.
        let residual = (0..nr)
            .map(|i| {
                let row: f64 = (0..nc)
                    .map(|j| ((f[i] + g[j] - c[(i, j)]) / eps).exp())
                    .sum();
                (row - log_a[i].exp()).abs()
            })
            .fold(0.0, f64::max);
        if residual <= params.tol {
            converged = true;
            break;
        }
    }

    let mut coupling = DMatrix::zeros(n, m);
    for (ii, &i) in rows.iter().enumerate() {
        for (jj, &j) in cols.iter().enumerate() {
            coupling[(i, j)] = ((f[ii] + g[jj] - c[(ii, jj)]) / eps).exp();
        }
    }
    if coupling.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "Sinkhorn coupling is non-finite; increase epsilon".into(),
        ));
    }
    Ok(TransportPlan::from_coupling(
        coupling,
        cost,
        Solver::Sinkhorn,
        iterations,
        converged,
    ))
}
