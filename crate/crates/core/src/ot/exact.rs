//! Exact transport via the network simplex method on the bipartite
//! transportation graph.
//!
//! The basis is a spanning tree over the `n + m` row/column nodes with
//! `n + m - 1` basic cells. The north-west corner rule supplies the starting
//! tree, and pricing uses block search over the cost matrix. Each pivot
//! rebuilds potentials from the tree, which costs `O(n + m)`.

use nalgebra::DMatrix;

use super::{CostMatrix, Solver, TransportPlan};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

/// Marginal mass tolerance accepted by the exact solver.
pub const EXACT_MASS_TOLERANCE: f64 = 1e-9;

pub fn emd_exact(
    u: &DiscreteMeasure,
    v: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<TransportPlan> {
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
    for (name, w) in [("source", u.weights()), ("target", v.weights())] {
        let total = w.sum();
        if (total - 1.0).abs() > EXACT_MASS_TOLERANCE
            || w.iter().any(|x| *x < 0.0 || !x.is_finite())
        {
            return Err(Error::invalid(format!(
                "{name} weights are not a probability vector (mass {total})"
            )));
        }
    }
    if u.same_as(v) {
        return Ok(TransportPlan::identity(u, cost));
    }
    let (flow, iterations) = solve(u.weights().as_slice(), v.weights().as_slice(), &cost.values)?;
    Ok(TransportPlan::from_coupling(
        flow,
        cost,
        Solver::Exact,
        iterations,
        true,
    ))
}

/// Basic cell of the spanning tree.
#[derive(Clone, Copy, Debug)]
struct Cell {
    row: usize,
    col: usize,
}

struct Tree {
    /// Parent node and the basis slot of the edge to it; `usize::MAX` at the root.
    parent: Vec<(usize, usize)>,
    depth: Vec<usize>,
    potential: Vec<f64>,
}

/// Runs the transportation simplex. Returns the optimal flow and pivot count.
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut flow = DMatrix::zeros(n, m);
    let mut in_basis = vec![false; n * m];
    let mut basis = north_west_corner(a, b, &mut flow);
    for c in &basis {
        in_basis[c.row * m + c.col] = true;
    }
    if n == 1 || m == 1 {
        return Ok((flow, 0));
    }

    let scale = cost.iter().fold(1.0f64, |acc, c| acc.max(c.abs()));
    let reduced_tol = 1e-12 * scale;
    let total = n * m;
    let block = ((total as f64).sqrt().ceil() as usize).max(16).min(total);
    let max_pivots = 50 * total + 1000;
    let mut cursor = 0usize;
    let mut pivots = 0usize;
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m];

    loop {
        let tree = build_tree(&basis, n, m, cost, &mut adjacency);

        // Block search pricing: take the most negative reduced cost within the
        // first block that contains any improving cell.
        let mut best: Option<(usize, f64)> = None;
        let mut scanned = 0;
        while scanned < total {
            let end = (scanned + block).min(total);
            for _ in scanned..end {
                let idx = cursor;
                cursor += 1;
                if cursor == total {
                    cursor = 0;
                }
                if in_basis[idx] {
                    continue;
                }
                let (i, j) = (idx / m, idx % m);
                let rc = cost[(i, j)] - tree.potential[i] - tree.potential[n + j];
                if rc < -reduced_tol && best.is_none_or(|(_, b)| rc < b) {
                    best = Some((idx, rc));
                }
            }
            scanned = end;
            if best.is_some() {
                break;
            }
        }
        let Some((entering, _)) = best else {
            return Ok((flow, pivots));
        };

        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Numerical(format!(
                "network simplex exceeded {max_pivots} pivots"
            )));
        }

        let (ei, ej) = (entering / m, entering % m);
        // Path from column node back to row node through the tree. Cells
        // alternate -,+,-,... starting at the column end.
        let path = tree_path(&tree, n + ej, ei);
        let mut theta = f64::INFINITY;
        let mut leaving_slot = usize::MAX;
        for (k, &slot) in path.iter().enumerate() {
            if k % 2 == 0 {
                let c = basis[slot];
                let x = flow[(c.row, c.col)];
                if x < theta {
                    theta = x;
                    leaving_slot = slot;
                }
            }
        }
        for (k, &slot) in path.iter().enumerate() {
            let c = basis[slot];
            if k % 2 == 0 {
                flow[(c.row, c.col)] -= theta;
            } else {
                flow[(c.row, c.col)] += theta;
            }
        }
        let leaving = basis[leaving_slot];
        flow[(leaving.row, leaving.col)] = 0.0;
        flow[(ei, ej)] = theta;
        in_basis[leaving.row * m + leaving.col] = false;
        in_basis[entering] = true;
        basis[leaving_slot] = Cell { row: ei, col: ej };
    }
}

fn north_west_corner(a: &[f64], b: &[f64], flow: &mut DMatrix<f64>) -> Vec<Cell> {
    let (n, m) = (a.len(), b.len());
    let mut basis = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    loop {
        let q = ra.min(rb).max(0.0);
        flow[(i, j)] = q;
        basis.push(Cell { row: i, col: j });
        ra -= q;
        rb -= q;
        if i == n - 1 && j == m - 1 {
            break;
        }
        let move_down = if i == n - 1 {
            false
        } else if j == m - 1 {
            true
        } else {
            ra <= rb
        };
        if move_down {
            i += 1;
            ra = a[i];
        } else {
            j += 1;
            rb = b[j];
        }
    }
    basis
}

/// Nodes `0..n` are rows, `n..n+m` are columns. Root is row 0 with potential 0.
fn build_tree(
    basis: &[Cell],
    n: usize,
    m: usize,
    cost: &DMatrix<f64>,
    adjacency: &mut [Vec<(usize, usize)>],
) -> Tree {
    for list in adjacency.iter_mut() {
        list.clear();
    }
    for (slot, c) in basis.iter().enumerate() {
        adjacency[c.row].push((n + c.col, slot));
        adjacency[n + c.col].push((c.row, slot));
    }
    let nodes = n + m;
    let mut parent = vec![(usize::MAX, usize::MAX); nodes];
    let mut depth = vec![0usize; nodes];
    let mut potential = vec![0.0; nodes];
    let mut seen = vec![false; nodes];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(node) = stack.pop() {
        for &(next, slot) in &adjacency[node] {
            if seen[next] {
                continue;
            }
            seen[next] = true;
            parent[next] = (node, slot);
            depth[next] = depth[node] + 1;
            let c = basis[slot];
            // u_row + v_col = C[row, col]
            potential[next] = cost[(c.row, c.col)] - potential[node];
            stack.push(next);
        }
    }
    Tree {
        parent,
        depth,
        potential,
    }
}

/// Basis slots on the tree path from `from` to `to`, in walking order.
fn tree_path(tree: &Tree, from: usize, to: usize) -> Vec<usize> {
    let mut head = Vec::new();
    let mut tail = Vec::new();
    let (mut x, mut y) = (from, to);
    while tree.depth[x] > tree.depth[y] {
        let (p, slot) = tree.parent[x];
        head.push(slot);
        x = p;
    }
    while tree.depth[y] > tree.depth[x] {
        let (p, slot) = tree.parent[y];
        tail.push(slot);
        y = p;
    }
    while x != y {
        let (px, sx) = tree.parent[x];
        let (py, sy) = tree.parent[y];
        head.push(sx);
        tail.push(sy);
        x = px;
        y = py;
    }
    head.extend(tail.into_iter().rev());
    head
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{ground_cost, GroundMetric};

    fn scalar_measure(xs: &[f64], w: Option<&[f64]>) -> DiscreteMeasure {
        crate::measures::empirical_measure(DMatrix::from_column_slice(xs.len(), 1, xs), w).unwrap()
    }

    fn exact(u: &DiscreteMeasure, v: &DiscreteMeasure) -> TransportPlan {
        let c = ground_cost(u, v, GroundMetric::Absolute, 1.0).unwrap();
        emd_exact(u, v, &c).unwrap()
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let u = scalar_measure(&[0.0, 3.0, 5.0], None);
        let plan = exact(&u, &u);
        assert_eq!(plan.distance, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(plan.coupling[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn two_by_two_monotone_matching() {
        let plan = exact(
            &scalar_measure(&[0.0, 1.0], None),
            &scalar_measure(&[2.0, 3.0], None),
        );
        assert!((plan.distance - 2.0).abs() < 1e-12);
    }

    #[test]
    fn forced_plan_onto_single_atom() {
        let plan = exact(
            &scalar_measure(&[0.0, 1.0, 2.0], None),
            &scalar_measure(&[1.0], None),
        );
        assert!((plan.distance - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pivots_improve_on_north_west_start() {
        // NW corner pairs 0->3 and 3->0 here; the optimum is the identity pairing.
        let u = scalar_measure(&[0.0, 3.0], None);
        let v = scalar_measure(&[3.0, 0.0], None);
        let c = ground_cost(&u, &v, GroundMetric::Absolute, 1.0).unwrap();
        let plan = emd_exact(&u, &v, &c).unwrap();
        assert_eq!(plan.distance, 0.0);
        assert!(plan.iterations >= 1);
    }

    #[test]
    fn marginals_hold_with_uneven_weights() {
        let u = scalar_measure(&[0.0, 1.0, 4.0, 9.0], Some(&[0.1, 0.2, 0.3, 0.4]));
        let v = scalar_measure(&[2.0, 5.0, 7.0], Some(&[0.5, 0.25, 0.25]));
        let plan = exact(&u, &v);
        for i in 0..4 {
            assert!((plan.coupling.row(i).sum() - u.weights()[i]).abs() < 1e-12);
        }
        for j in 0..3 {
            assert!((plan.coupling.column(j).sum() - v.weights()[j]).abs() < 1e-12);
        }
        assert!(plan.coupling.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let u = scalar_measure(&[0.0, 1.0], None);
        let v = scalar_measure(&[0.0], None);
        let c = ground_cost(&u, &u, GroundMetric::Absolute, 1.0).unwrap();
        assert!(emd_exact(&u, &v, &c).is_err());
    }
}
