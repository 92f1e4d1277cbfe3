use std::path::Path;
use std::process::Command;

fn selcdf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_selcdf"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

const LB: &str = r#"{"model": {"kind": "uniform", "a": 0.5, "b": 1.5},
  "design": {"variant": "length_biased", "tau": 0.5},
  "n_grid": [100, 400], "replicates": 10, "seed": 3,
  "quantile_interval": [0.1, 0.9], "quantile_grid": 64, "mode": "converge"}"#;

#[test]
fn missing_config_is_a_usage_error() {
    let out = selcdf().arg("converge").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unreadable_or_invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = selcdf().args(["converge", "--config"]).arg(dir.path().join("nope.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(dir.path(), r#"{"model": {"kind": "uniform", "a": 1, "b": 0}}"#);
    let out = selcdf().args(["converge", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn converge_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LB);
    let csv = dir.path().join("lb.csv");
    let out = selcdf().args(["converge", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(&csv).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text.starts_with("design,N,replicate,realized_n,empty,sup_dist,sup_dist_sq,quantile_sup_dist\n"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("lb.json")).unwrap()).unwrap();
    assert_eq!(summary["aggregates"].as_array().unwrap().len(), 2);
}

#[test]
fn seed_and_thread_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LB);
    let run = |name: &str, extra: &[&str]| {
        let csv = dir.path().join(name);
        let status = selcdf().args(["converge", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(&csv).args(extra).status().unwrap();
        assert!(status.success());
        std::fs::read(csv).unwrap()
    };
    let a = run("a.csv", &["--threads", "1"]);
    let b = run("b.csv", &["--threads", "4"]);
    let c = run("c.csv", &["--seed", "4"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn couple_on_non_enumerable_design_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &LB.replace("[100, 400]", "[100]"));
    let out = selcdf().args(["couple", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("enumeration infeasible"));
}

#[test]
fn converge_without_limit_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &LB.replace(r#"{"variant": "length_biased", "tau": 0.5}"#, r#"{"variant": "cluster_split", "tau": 1.0}"#));
    let out = selcdf().args(["converge", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("audit"));
}

#[test]
fn audit_prints_table_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &LB.replace(r#"{"variant": "length_biased", "tau": 0.5}"#, r#"{"variant": "bernoulli", "p": 0.3}"#)
            .replace("[100, 400]", "[100, 200, 400]")
            .replace(r#""mode": "converge""#, r#""audit": {"reps": 200}"#),
    );
    let json = dir.path().join("audit.json");
    let out = selcdf().args(["audit", "--config"]).arg(&cfg).arg("--out").arg(&json).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("A4") && stdout.contains("pass"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(report["entries"][0]["id"], "A4");
}

#[test]
fn enumerate_and_couple_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let body = LB
        .replace(r#"{"variant": "length_biased", "tau": 0.5}"#, r#"{"variant": "srswor", "size": {"n": 2}}"#)
        .replace("[100, 400]", "[3, 5]");
    let cfg = write_config(dir.path(), &body);
    let csv = dir.path().join("support.csv");
    let status = selcdf().args(["enumerate", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(&csv).status().unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 11);
    let csv = dir.path().join("couple.csv");
    let status = selcdf().args(["couple", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(&csv).status().unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("indicator,h,interval_lo,interval_hi\n"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("couple.json")).unwrap()).unwrap();
    assert_eq!(summary["trajectory"].as_array().unwrap().len(), 2);
}
