use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qpkdv(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpkdv"))
        .args(args)
        .args(["--out", out.to_str().unwrap()])
        .output()
        .expect("binary runs")
}

const SMALL: &str = r#"
[truncation]
v = 2
kphi = 3
kx = 6

[forcing]
eps = 1e-4
q = 0.0
modes = [{ ell = [1, 0], k = 1, re = 1.0 }, { ell = [0, 1], k = 2, im = 0.4 }]

[lambda]
values = [0.8, 1.1]
"#;

fn config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn solve_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = qpkdv(&["solve", "--config", &cfg], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "report.json", "convergence.csv", "solutions/lambda_000.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 0);

    let mut rd = csv::Reader::from_path(out.join("convergence.csv")).unwrap();
    let mut last: Option<(f64, f64)> = None;
    for rec in rd.records() {
        let rec = rec.unwrap();
        let lambda: f64 = rec[0].parse().unwrap();
        let r: f64 = rec[2].parse().unwrap();
        if let Some((l0, r0)) = last {
            if l0 == lambda {
                assert!(r < r0, "residual column not monotone at lambda {lambda}");
            }
        }
        last = Some((lambda, r));
    }
}

#[test]
fn json_report_on_stdout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let o = qpkdv(&["solve", "--config", &cfg, "--lambda", "1.1", "--report", "json"], &tmp.path().join("run"));
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["lambdas"].as_array().unwrap().len(), 1);
    assert_eq!(v["lambdas"][0]["status"]["kind"], "converged");
}

#[test]
fn resonant_parameter_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL.replace("ell = [1, 0], k = 1", "ell = [-1, 0], k = 1").replace("[0.8, 1.1]", "[1.0]");
    let cfg = config(tmp.path(), &body);
    let o = qpkdv(&["solve", "--config", &cfg], &tmp.path().join("run"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("excluded"));
}

#[test]
fn malformed_config_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "[truncation]\nkphi = \"eight\"\n");
    let o = qpkdv(&["solve", "--config", &cfg], &tmp.path().join("run"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));

    let cfg = config(tmp.path(), "[forcing]\neps = 0.5\n");
    let o = qpkdv(&["solve", "--config", &cfg], &tmp.path().join("run"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sieve_reports_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("sieve");
    let o = qpkdv(&["sieve", "--config", &cfg, "--grid", "500"], &out);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sieve.json")).unwrap()).unwrap();
    let frac = v["excluded_fraction"].as_f64().unwrap();
    assert!((0.0..0.1).contains(&frac));
    assert!(out.join("excluded.csv").exists());
}

#[test]
fn check_suite_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("check");
    let o = qpkdv(&["check", "--suite", "reduction"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS reduction/contraction"));
    assert!(out.join("checks.json").exists());
}
