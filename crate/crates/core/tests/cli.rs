use std::path::Path;
use std::process::{Command, Output};

fn wdje(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdje"))
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn wasserstein_between_point_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("u.csv"), "x\n0\n1\n").unwrap();
    std::fs::write(dir.path().join("v.csv"), "x\n2\n3\n").unwrap();
    let out = wdje(&[
        "wasserstein",
        "--u",
        &path(dir.path(), "u.csv"),
        "--v",
        &path(dir.path(), "v.csv"),
    ]);
    let v = json(&out);
    let d = v.get("distance").and_then(|d| d.as_f64()).unwrap();
    assert!((d - 2.0).abs() < 1e-12, "{v}");
}

#[test]
fn score_and_consistency() {
    let v = json(&wdje(&[
        "score",
        "--bound-total",
        "0.5",
        "--risk-without",
        "1.0",
    ]));
    let text = v.to_string();
    assert!(text.contains("-0.5") && text.contains("transfer"), "{text}");
    let v = json(&wdje(&["consistency", "--counts", "3,0,22,24"]));
    let text = v.to_string();
    assert!(text.contains("0.5217391304347826"), "{text}");
}

#[test]
fn synth_bound_and_sweep_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (path(dir.path(), "s.csv"), path(dir.path(), "t.csv"));
    let out = wdje(&[
        "synth",
        "--samples",
        "30",
        "--dim",
        "3",
        "--shift",
        "1",
        "--out-source",
        &s,
        "--out-target",
        &t,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&wdje(&[
        "bound",
        "--source-features",
        &s,
        "--target-features",
        &t,
        "--source-risk",
        "0.2",
        "--classes",
        "4",
    ]));
    let report = v.pointer("/result/report").unwrap();
    let total = report["total"].as_f64().unwrap();
    let sum: f64 = [
        "source_risk",
        "domain_term",
        "task_term_w",
        "task_term_moment",
        "slack_term",
    ]
    .iter()
    .map(|k| report[k].as_f64().unwrap())
    .sum();
    assert!((total - sum).abs() < 1e-12);

    let csv = path(dir.path(), "rows.csv");
    let out = wdje(&[
        "sweep",
        "--samples",
        "40",
        "--ratios",
        "0.5,1",
        "--seeds",
        "1,2",
        "--shifts",
        "0,2",
        "--format",
        "csv",
        "--output",
        &csv,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("task_id,c,r,bound_total,tr_score,risk_without,risk_with,empirical_tr,leep,nce,logme,hscore"));
    assert_eq!(text.lines().count(), 9);
    let v = json(&wdje(&["consistency", "--records", &csv]));
    assert!(v.to_string().contains("ci_table"));
}

#[test]
fn errors_exit_non_zero() {
    assert_eq!(wdje(&["--bogus"]).status.code(), Some(1));
    assert_eq!(
        wdje(&[
            "wasserstein",
            "--u",
            "/nonexistent.csv",
            "--v",
            "/nonexistent.csv"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        wdje(&["consistency", "--counts", "1,2"]).status.code(),
        Some(1)
    );
    assert_eq!(wdje(&["--help"]).status.code(), Some(0));
}
