#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn positive_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.05..1.0)).collect()
}

pub fn random_simplex_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(rows, cols, |_, _| {
        rng.sample::<f64, _>(StandardNormal).exp()
    });
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

fn combinations(
    n: usize,
    k: usize,
    start: usize,
    cur: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if cur.len() == k {
        visit(cur);
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        combinations(n, k, i + 1, cur, visit);
        cur.pop();
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

/// Flows on a spanning tree of the bipartite graph, by peeling leaves.
fn tree_flows(a: &[f64], b: &[f64], cells: &[(usize, usize)]) -> Vec<f64> {
    let n = a.len();
    let mut supply: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut alive = vec![true; cells.len()];
    let mut flows = vec![0.0; cells.len()];
    for _ in 0..cells.len() {
        let mut degree = vec![0usize; supply.len()];
        for (e, &(i, j)) in cells.iter().enumerate() {
            if alive[e] {
                degree[i] += 1;
                degree[n + j] += 1;
            }
        }
        let (e, leaf) = cells
            .iter()
            .enumerate()
            .filter(|(e, _)| alive[*e])
            .find_map(|(e, &(i, j))| {
                if degree[i] == 1 {
                    Some((e, i))
                } else if degree[n + j] == 1 {
                    Some((e, n + j))
                } else {
                    None
                }
            })
            .expect("a tree always has a leaf");
        let (i, j) = cells[e];
        let other = if leaf == i { n + j } else { i };
        flows[e] = supply[leaf];
        supply[other] -= supply[leaf];
        supply[leaf] = 0.0;
        alive[e] = false;
    }
    flows
}

/// Exact transport cost by enumerating every basic solution of the
/// transport polytope and keeping the cheapest feasible one.
pub fn transport_vertex_oracle(a: &[f64], b: &[f64], cost: &DMatrix<f64>) -> f64 {
    let (n, m) = (a.len(), b.len());
    let k = n + m - 1;
    let mut best = f64::INFINITY;
    combinations(n * m, k, 0, &mut Vec::with_capacity(k), &mut |chosen| {
        let mut parent: Vec<usize> = (0..n + m).collect();
        for &c in chosen {
            let (ri, rj) = (find(&mut parent, c / m), find(&mut parent, n + c % m));
            if ri == rj {
                return;
            }
            parent[ri] = rj;
        }
        let cells: Vec<(usize, usize)> = chosen.iter().map(|&c| (c / m, c % m)).collect();
        let flows = tree_flows(a, b, &cells);
        if flows.iter().any(|&f| f < -1e-12) {
            return;
        }
        let total: f64 = cells
            .iter()
            .zip(&flows)
            .map(|(&(i, j), f)| f * cost[(i, j)])
            .sum();
        best = best.min(total);
    });
    best
}

/// Per-sample log evidence of `y` under `y ~ N(0, F F^T / alpha + I / beta)`.
pub fn logme_direct_evidence(f: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, beta: f64) -> f64 {
    let n = f.nrows();
    let cov = f * f.transpose() / alpha + DMatrix::identity(n, n) / beta;
    let chol = cov.cholesky().expect("covariance is positive definite");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = y.dot(&chol.solve(y));
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad) / n as f64
}

/// Maximum of the direct evidence over `alpha, beta` in `[lo, hi]`, by a
/// log-spaced grid followed by nested refinement around the best point.
pub fn logme_grid_oracle(f: &DMatrix<f64>, y: &DVector<f64>, lo: f64, hi: f64) -> f64 {
    let (llo, lhi) = (lo.log10(), hi.log10());
    let eval = |la: f64, lb: f64| logme_direct_evidence(f, y, 10f64.powf(la), 10f64.powf(lb));
    let mut center = (0.0, 0.0);
    let mut best = f64::NEG_INFINITY;
    let mut step = 0.05;
    let steps = ((lhi - llo) / step).round() as usize;
    for i in 0..=steps {
        for j in 0..=steps {
            let (la, lb) = (llo + i as f64 * step, llo + j as f64 * step);
            let v = eval(la, lb);
            if v > best {
                best = v;
                center = (la, lb);
            }
        }
    }
    for _ in 0..8 {
        let (ca, cb) = center;
        let radius = 2.0 * step;
        step /= 20.0;
        for i in 0..=80 {
            for j in 0..=80 {
                let la = (ca - radius + i as f64 * step).clamp(llo, lhi);
                let lb = (cb - radius + j as f64 * step).clamp(llo, lhi);
                let v = eval(la, lb);
                if v > best {
                    best = v;
                    center = (la, lb);
                }
            }
        }
    }
    best
}
