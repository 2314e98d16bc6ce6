mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use wdje::baselines::{
    hscore, leep, logme, nce, pearson, SourcePredictions, LOGME_PRECISION_RANGE,
};
use wdje::bound::{
    lambda_and_phi, lipschitz_cross_entropy, lipschitz_mse, target_risk_bound, BoundConfig, Loss,
};
use wdje::decision::{consistency_index, ConfusionMatrix};
use wdje::harness::{
    evaluate_sweep, run_sweep, sweep_report, write_report_json, write_rows_csv, PipelineConfig,
    SweepGrid, SweepInput, SweepRow, SyntheticConfig, TrainHyper,
};
use wdje::measures::{empirical_measure, DiscreteMeasure, LabelEncoding, TaskKind};
use wdje::ot::{emd_exact, ground_cost, sinkhorn, wasserstein_1d, GroundMetric, SinkhornParams};
use wdje::par::Execution;

fn report(n: u32, pass: bool, detail: &str) {
    println!(
        "criterion {n}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn measure(points: DMatrix<f64>, weights: &[f64]) -> DiscreteMeasure {
    empirical_measure(points, Some(weights)).unwrap()
}

#[test]
fn criterion_1_exact_solver_matches_vertex_enumeration() {
    let mut rng = rng(101);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for t in 0..200 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let (dim, metric) = if t % 2 == 0 {
            (2, GroundMetric::Euclidean)
        } else {
            (1, GroundMetric::Absolute)
        };
        let u = measure(
            gaussian_matrix(&mut rng, n, dim),
            &positive_weights(&mut rng, n),
        );
        let v = measure(
            gaussian_matrix(&mut rng, m, dim),
            &positive_weights(&mut rng, m),
        );
        let cost = ground_cost(&u, &v, metric, 1.0).unwrap();
        let got = emd_exact(&u, &v, &cost).unwrap().objective;
        let want =
            transport_vertex_oracle(u.weights().as_slice(), v.weights().as_slice(), &cost.values);
        worst = worst.max((got - want).abs());
    }
    let elapsed = start.elapsed();
    report(
        1,
        worst <= 1e-9 && elapsed < Duration::from_secs(5),
        &format!("200 instances, max |diff| = {worst:.3e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_2_closed_form_1d_matches_exact() {
    let mut rng = rng(202);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let n = rng.random_range(1..=50);
        let m = rng.random_range(1..=50);
        let wu = if t % 2 == 0 {
            vec![1.0; n]
        } else {
            positive_weights(&mut rng, n)
        };
        let wv = if t % 3 == 0 {
            vec![1.0; m]
        } else {
            positive_weights(&mut rng, m)
        };
        let u = measure(gaussian_matrix(&mut rng, n, 1), &wu);
        let v = measure(gaussian_matrix(&mut rng, m, 1) * 2.0, &wv);
        let cost = ground_cost(&u, &v, GroundMetric::Absolute, 1.0).unwrap();
        let exact = emd_exact(&u, &v, &cost).unwrap().distance;
        let closed = wasserstein_1d(&u, &v, 1.0).unwrap();
        worst = worst.max((exact - closed).abs());
    }
    report(
        2,
        worst <= 1e-9,
        &format!("100 instances, max |diff| = {worst:.3e}"),
    );
}

#[test]
fn criterion_3_sinkhorn_approaches_exact() {
    let mut rng = rng(303);
    let scales = [1.0, 0.1, 0.01];
    let mut max_err_small = 0.0f64;
    let mut monotone = true;
    for _ in 0..20 {
        let u = measure(
            gaussian_matrix(&mut rng, 10, 2),
            &positive_weights(&mut rng, 10),
        );
        let v = measure(
            gaussian_matrix(&mut rng, 10, 2),
            &positive_weights(&mut rng, 10),
        );
        let cost = ground_cost(&u, &v, GroundMetric::Euclidean, 1.0).unwrap();
        let exact = emd_exact(&u, &v, &cost).unwrap().objective;
        let errs: Vec<f64> = scales
            .iter()
            .map(|s| {
                let params = SinkhornParams {
                    epsilon: s * cost.mean(),
                    max_iter: 200_000,
                    tol: 1e-10,
                };
                let plan = sinkhorn(&u, &v, &cost, params).unwrap();
                (plan.objective - exact).abs() / exact
            })
            .collect();
        monotone &= errs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        max_err_small = max_err_small.max(errs[2]);
    }
    report(
        3,
        max_err_small <= 0.01 && monotone,
        &format!(
            "max relative error at 0.01*mean(C) = {max_err_small:.3e}, non-increasing = {monotone}"
        ),
    );
}

#[test]
fn criterion_4_consistency_tables() {
    // (n_pp, n_pm, n_mp, n_mm, reported CI)
    let rows: [(usize, usize, usize, usize, f64); 18] = [
        (3, 0, 22, 24, 0.5217),
        (0, 0, 0, 49, 1.0),
        (0, 0, 0, 49, 1.0),
        (19, 3, 0, 27, 1.0),
        (0, 1, 0, 48, 1.0),
        (0, 0, 0, 49, 1.0),
        (0, 0, 0, 80, 1.0),
        (0, 0, 0, 80, 1.0),
        (0, 0, 0, 80, 1.0),
        (0, 0, 0, 80, 1.0),
        (0, 1, 0, 79, 1.0),
        (0, 0, 0, 70, 1.0),
        (0, 9, 0, 40, 1.0),
        (0, 9, 0, 40, 1.0),
        (0, 5, 0, 44, 1.0),
        (48, 0, 1, 0, 0.0),
        (0, 0, 0, 49, 1.0),
        (46, 2, 1, 0, 0.0),
    ];
    let mut mismatches = Vec::new();
    for (i, &(pp, pm, mp, mm, want)) in rows.iter().enumerate() {
        let ci = consistency_index(&ConfusionMatrix::from_counts(pp, pm, mp, mm));
        let got = ci.ci_table.value.unwrap_or(f64::NAN);
        if !((got * 1e4).round() / 1e4 == want) {
            mismatches.push(format!("row {i}: {got} vs {want}"));
        }
    }
    report(
        4,
        mismatches.is_empty(),
        &format!("{} table rows, mismatches: {mismatches:?}", rows.len()),
    );
}

#[test]
fn criterion_5_bound_is_sum_of_terms_and_monotone() {
    let mut rng = rng(505);
    let mut worst_sum = 0.0f64;
    let mut monotone = true;
    for _ in 0..1000 {
        let mut cfg = BoundConfig::new(Loss::CrossEntropy, LabelEncoding::one_hot(3));
        cfg.m = rng.random_range(0.1..3.0);
        let x = [
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..5.0),
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..2.0),
            rng.random_range(1e-3..2.0),
        ];
        let eval = |x: &[f64; 5], cfg: &BoundConfig| {
            target_risk_bound(x[0], x[1], x[2], x[3], x[4], cfg).unwrap()
        };
        let base = eval(&x, &cfg);
        let lambda = cfg.k_lambda_product / x[4];
        let independent =
            x[0] + x[4] * lambda * x[1] + x[2] + x[3] + x[4] * cfg.m * (-lambda).exp();
        worst_sum = worst_sum
            .max((base.total - base.term_sum()).abs())
            .max((base.total - independent).abs());
        for i in 0..5 {
            let mut y = x;
            y[i] += 0.05 + 0.1 * y[i];
            monotone &= eval(&y, &cfg).total > base.total;
        }
        let mut bigger_m = cfg;
        bigger_m.m *= 1.5;
        monotone &= eval(&x, &bigger_m).total > base.total;
    }
    report(
        5,
        worst_sum <= 1e-12 && monotone,
        &format!(
            "1000 inputs, max |total - sum| = {worst_sum:.3e}, strictly increasing = {monotone}"
        ),
    );
}

#[test]
fn criterion_6_lipschitz_and_lambda_recipe() {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        if !((got - want).abs() <= tol) {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };
    let mut x = DMatrix::zeros(100, 1);
    x[(0, 0)] = 50.0;
    check(
        "ce c=10 N=100",
        lipschitz_cross_entropy(&x, 10).unwrap().k,
        0.45,
        1e-12,
    );
    let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    check(
        "ce c=2 N=1",
        lipschitz_cross_entropy(&x, 2).unwrap().k,
        0.5,
        1e-12,
    );
    let zero = lipschitz_cross_entropy(&DMatrix::zeros(3, 2), 4).unwrap();
    check("ce zeros", zero.k, 0.0, 0.0);
    check(
        "ce zeros degenerate flag",
        f64::from(u8::from(zero.degenerate)),
        1.0,
        0.0,
    );

    let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
    check(
        "mse ones",
        lipschitz_mse(&x, &[0.0, 0.0], 1.0, 1e-6).unwrap().k,
        1.0,
        1e-12,
    );
    let neg = lipschitz_mse(&DMatrix::from_row_slice(1, 1, &[1.0]), &[2.0], 1.0, 1e-6).unwrap();
    check("mse raw", neg.raw, -1.0, 1e-12);
    check("mse clamped", neg.k, 1e-6, 0.0);
    check(
        "mse clamped flag",
        f64::from(u8::from(neg.clamped)),
        1.0,
        0.0,
    );
    let ident = lipschitz_mse(&DMatrix::identity(2, 2), &[0.0, 0.0], 1.0, 1e-6).unwrap();
    check("mse identity", ident.k, 0.5, 1e-12);

    let cfg = BoundConfig::new(Loss::CrossEntropy, LabelEncoding::one_hot(2));
    for (k, lambda, phi) in [
        (0.001, 1.0, (-1.0f64).exp()),
        (1.0, 0.001, (-0.001f64).exp()),
    ] {
        let lp = lambda_and_phi(k, &cfg).unwrap();
        check("lambda", lp.lambda, lambda, 1e-12);
        check("phi", lp.phi_lambda, phi, 1e-12);
        check("k*lambda", k * lp.lambda, cfg.k_lambda_product, 1e-15);
    }
    let tiny = lambda_and_phi(1e-6, &cfg).unwrap();
    check("lambda tiny k", tiny.lambda, 1000.0, 1e-9);
    check("phi tiny k", tiny.phi_lambda, 0.0, 0.0);
    check(
        "underflow flag",
        f64::from(u8::from(tiny.underflow)),
        1.0,
        0.0,
    );
    let slack = target_risk_bound(0.0, 0.0, 0.0, 0.0, 0.001, &cfg).unwrap();
    check("slack only", slack.total, 0.001 * (-1.0f64).exp(), 1e-15);

    report(
        6,
        failures.is_empty(),
        &format!("recipe cases, failures: {failures:?}"),
    );
}

#[test]
fn criterion_7_baseline_suite() {
    let mut rng = rng(707);
    let mut failures = Vec::new();

    let mut max_leep = f64::NEG_INFINITY;
    let mut max_nce = f64::NEG_INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(5..60);
        let z = rng.random_range(2..6);
        let c = rng.random_range(2..6);
        let preds = SourcePredictions::new(random_simplex_rows(&mut rng, n, z)).unwrap();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        max_leep = max_leep.max(leep(&preds, &y, c).unwrap());
        let zs: Vec<usize> = (0..n).map(|_| rng.random_range(0..z)).collect();
        max_nce = max_nce.max(nce(&zs, &y).unwrap());
    }
    if max_leep > 0.0 || max_nce > 0.0 {
        failures.push(format!("positive score: leep {max_leep}, nce {max_nce}"));
    }

    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let one_hot = DMatrix::from_fn(12, 3, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
    let perfect_leep = leep(&SourcePredictions::new(one_hot).unwrap(), &labels, 3).unwrap();
    let perm: Vec<usize> = labels.iter().map(|&l| (l + 1) % 3).collect();
    let perfect_nce = nce(&perm, &labels).unwrap();
    if perfect_leep.abs() > 1e-12 || perfect_nce.abs() > 1e-12 {
        failures.push(format!(
            "perfect alignment: leep {perfect_leep}, nce {perfect_nce}"
        ));
    }

    let block = gaussian_matrix(&mut rng, 10, 4);
    let features = DMatrix::from_fn(30, 4, |i, j| block[(i % 10, j)]);
    let hlabels: Vec<usize> = (0..30).map(|i| i / 10).collect();
    let h = hscore(&features, &hlabels).unwrap();
    if h.abs() > 1e-9 {
        failures.push(format!("label-independent H-score {h}"));
    }

    let f = gaussian_matrix(&mut rng, 40, 5);
    let y: Vec<f64> = (0..40).map(|i| (i % 3) as f64).collect();
    let task = TaskKind::Classification { classes: 3 };
    let base = logme(&f, &y, task).unwrap().value;
    let mut worst_rot = 0.0f64;
    for _ in 0..20 {
        let q = gaussian_matrix(&mut rng, 5, 5).qr().q();
        let rotated = logme(&(&f * q), &y, task).unwrap().value;
        worst_rot = worst_rot.max((rotated - base).abs());
    }
    if worst_rot > 1e-6 {
        failures.push(format!("LogME rotation change {worst_rot}"));
    }

    let f = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, -1.0, -1.0]);
    let yv = [1.0, 1.0, -1.0, -1.0];
    let got = logme(&f, &yv, TaskKind::Regression).unwrap().value;
    let (lo, hi) = LOGME_PRECISION_RANGE;
    let want = logme_grid_oracle(&f, &DVector::from_column_slice(&yv), lo, hi);
    if (got - want).abs() > 1e-4 {
        failures.push(format!("LogME {got} vs oracle {want}"));
    }

    report(
        7,
        failures.is_empty(),
        &format!(
            "max leep {max_leep:.3e}, max nce {max_nce:.3e}, H-score {h:.1e}, rotation {worst_rot:.1e}, \
             logme {got:.6} vs oracle {want:.6}; failures: {failures:?}"
        ),
    );
}

fn shift_sweep_setup() -> (SweepInput, SweepGrid, PipelineConfig) {
    let input = SweepInput::Synthetic(SyntheticConfig::default());
    let grid = SweepGrid {
        classes: vec![],
        ratios: (1..=10).map(|i| i as f64 / 10.0).collect(),
        seeds: vec![1, 2, 3],
        shifts: vec![0.0, 1.0, 2.0, 4.0],
    };
    let config = PipelineConfig {
        held_out_fraction: Some(0.25),
        continuation_hyper: TrainHyper {
            epochs: 1,
            batch_size: Some(10),
            learning_rate: 0.1,
            ..TrainHyper::default()
        },
        ..PipelineConfig::default()
    };
    (input, grid, config)
}

fn run_single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(f)
    }
    #[cfg(not(feature = "parallel"))]
    f()
}

#[test]
fn criterion_8_bound_tracks_target_risk() {
    let (input, grid, config) = shift_sweep_setup();
    let start = Instant::now();
    let rows =
        run_single_threaded(|| run_sweep(&input, &grid, &config, Execution::Sequential).unwrap());
    let elapsed = start.elapsed();
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let per_row = evaluate_sweep(&rows).unwrap().pearson["bound_total"]
        .value
        .unwrap_or(f64::NAN);

    let mut cells: BTreeMap<String, (f64, f64, f64)> = BTreeMap::new();
    for r in &ok {
        let e = cells
            .entry(format!("{}|{}", r.r, r.delta.unwrap_or(0.0)))
            .or_default();
        e.0 += r.bound_total.unwrap();
        e.1 += r.risk_with.unwrap();
        e.2 += 1.0;
    }
    let (bounds, risks): (Vec<f64>, Vec<f64>) =
        cells.values().map(|c| (c.0 / c.2, c.1 / c.2)).unzip();
    let averaged = pearson(&bounds, &risks).unwrap();
    report(
        8,
        ok.len() == rows.len() && averaged >= 0.8 && elapsed < Duration::from_secs(60),
        &format!(
            "pearson(bound, target risk) = {averaged:.4} over {} seed-averaged cells \
             (per row {per_row:.4}, {} rows), {elapsed:.2?}",
            bounds.len(),
            ok.len()
        ),
    );
}

fn render(report: &wdje::harness::SweepReport) -> (Vec<u8>, Vec<u8>) {
    let mut json = Vec::new();
    write_report_json(report, &mut json).unwrap();
    let mut csv = Vec::new();
    write_rows_csv(&report.rows, &mut csv).unwrap();
    (json, csv)
}

#[test]
fn criterion_9_sweeps_are_reproducible() {
    let input = SweepInput::Synthetic(SyntheticConfig {
        samples_per_domain: 120,
        ..SyntheticConfig::default()
    });
    let grid = SweepGrid {
        classes: vec![2, 4],
        ratios: vec![0.3, 0.7, 1.0],
        seeds: vec![5, 6],
        shifts: vec![0.0, 2.0],
    };
    let config = PipelineConfig::default();
    let first = render(&sweep_report(&input, &grid, &config, Execution::Sequential).unwrap());
    let second = render(&sweep_report(&input, &grid, &config, Execution::Sequential).unwrap());
    let parallel = render(&sweep_report(&input, &grid, &config, Execution::Parallel).unwrap());
    let same = first == second && first == parallel;
    report(
        9,
        same,
        &format!(
            "reruns byte-identical = {}, sequential vs parallel identical = {}, {} JSON bytes",
            first == second,
            first == parallel,
            first.0.len()
        ),
    );
}
