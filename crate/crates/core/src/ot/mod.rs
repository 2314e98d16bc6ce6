//! Discrete optimal transport.
//!
//! Three solvers share one [`TransportPlan`] result type:
//!
//! | solver | use |
//! |---|---|
//! | [`emd_exact`] | network simplex, vertex-optimal plans |
//! | [`sinkhorn`] | entropic approximation for large supports |
//! | [`wasserstein_1d`] | closed form on the real line |
//!
//! [`wasserstein`] picks one according to an [`OtConfig`].

mod cost;
mod exact;
mod one_d;
mod sinkhorn;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize, Serializer};

pub use cost::{ground_cost, CostMatrix, GroundMetric};
pub use exact::{emd_exact, EXACT_MASS_TOLERANCE};
pub use one_d::{monotone_plan, wasserstein_1d};
pub use sinkhorn::{sinkhorn, SinkhornParams};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Exact,
    Sinkhorn,
    ClosedForm1d,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    #[serde(serialize_with = "rows_of")]
    pub coupling: DMatrix<f64>,
    /// Transported cost `sum_ij P_ij C_ij`.
    pub objective: f64,
    /// `objective^(1/p)`.
    pub distance: f64,
    pub solver: Solver,
    pub metric: GroundMetric,
    pub power: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn rows_of<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

impl TransportPlan {
    pub(crate) fn from_coupling(
        coupling: DMatrix<f64>,
        cost: &CostMatrix,
        solver: Solver,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let objective = coupling.component_mul(&cost.values).sum().max(0.0);
        Self {
            coupling,
            objective,
            distance: objective.powf(1.0 / cost.power),
            solver,
            metric: cost.metric,
            power: cost.power,
            iterations,
            converged,
        }
    }

    /// Diagonal plan between a measure and itself.
    pub(crate) fn identity(u: &DiscreteMeasure, cost: &CostMatrix) -> Self {
        let coupling = DMatrix::from_diagonal(u.weights());
        Self {
            coupling,
            objective: 0.0,
            distance: 0.0,
            solver: Solver::Exact,
            metric: cost.metric,
            power: cost.power,
            iterations: 0,
            converged: true,
        }
    }

    /// Largest absolute deviation of the coupling's marginals from `u` and `v`.
    pub fn marginal_residual(&self, u: &DiscreteMeasure, v: &DiscreteMeasure) -> f64 {
        let rows = (0..u.len()).map(|i| (self.coupling.row(i).sum() - u.weights()[i]).abs());
        let cols = (0..v.len()).map(|j| (self.coupling.column(j).sum() - v.weights()[j]).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Exact,
    Sinkhorn,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtConfig {
    pub metric: GroundMetric,
    pub p: f64,
    pub solver: SolverChoice,
    /// Absolute entropic regularization; `None` means `0.1 * mean(C)`.
    pub epsilon: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    /// Largest `n * m` that `Auto` still hands to the exact solver.
    pub exact_threshold: usize,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            metric: GroundMetric::Euclidean,
            p: 1.0,
            solver: SolverChoice::Auto,
            epsilon: None,
            max_iter: 10_000,
            tol: 1e-8,
            exact_threshold: 250_000,
        }
    }
}

impl OtConfig {
    pub fn with_metric(mut self, metric: GroundMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_solver(mut self, solver: SolverChoice) -> Self {
        self.solver = solver;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::invalid(format!("p must be >= 1, got {}", self.p)));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(Error::invalid(format!(
                    "epsilon must be positive, got {eps}"
                )));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }

    /// Solver that `wasserstein` will use for supports of the given shape.
    pub fn resolve(&self, n: usize, m: usize, dim: usize) -> Solver {
        match self.solver {
            SolverChoice::Exact => Solver::Exact,
            SolverChoice::Sinkhorn => Solver::Sinkhorn,
            SolverChoice::Auto => {
                let line_metric = matches!(
                    self.metric,
                    GroundMetric::Euclidean | GroundMetric::Absolute
                );
                if dim == 1 && line_metric {
                    Solver::ClosedForm1d
                } else if n.saturating_mul(m) <= self.exact_threshold {
                    Solver::Exact
                } else {
                    Solver::Sinkhorn
                }
            }
        }
    }
}

/// Wasserstein distance of order `config.p` between `u` and `v`.
pub fn wasserstein(
    u: &DiscreteMeasure,
    v: &DiscreteMeasure,
    config: &OtConfig,
) -> Result<(f64, TransportPlan)> {
    config.validate()?;
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
    let solver = config.resolve(u.len(), v.len(), u.dim());
    if u.same_as(v) {
        let plan = TransportPlan {
            coupling: DMatrix::from_diagonal(u.weights()),
            objective: 0.0,
            distance: 0.0,
            solver,
            metric: config.metric,
            power: config.p,
            iterations: 0,
            converged: true,
        };
        return Ok((0.0, plan));
    }
    let plan = match solver {
        Solver::ClosedForm1d => {
            let mut plan = monotone_plan(u, v, config.p)?;
            plan.metric = config.metric;
            plan
        }
        Solver::Exact => {
            let cost = ground_cost(u, v, config.metric, config.p)?;
            emd_exact(u, v, &cost)?
        }
        Solver::Sinkhorn => {
            let cost = ground_cost(u, v, config.metric, config.p)?;
            let mut params = SinkhornParams::for_cost(&cost);
            params.max_iter = config.max_iter;
            params.tol = config.tol;
            if let Some(eps) = config.epsilon {
                params.epsilon = eps;
            } else if params.epsilon <= 0.0 {
                // All-zero costs: any coupling is optimal.
                params.epsilon = 1.0;
            }
            sinkhorn(u, v, &cost, params)?
        }
    };
    Ok((plan.distance, plan))
}
