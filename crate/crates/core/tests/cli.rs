use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_flexbus");

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn plan_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run(&["plan", "--config", &fixture("six_zone.json"), "--seed", "4", "--scenarios", "6", "--no-timing", "--out", d.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["plan.json", "run.json", "trace.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
}

#[test]
fn evaluate_writes_reports() {
    let d = tempfile::tempdir().unwrap();
    let out = run(&["evaluate", "--config", &fixture("three_zone.json"), "--seed", "1", "--scenarios", "4", "--rho", "0.3", "0.3", "--out", d.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&read(d.path(), "report.json")).unwrap();
    let total = report["total_cost"].as_f64().unwrap();
    let parts = report["fixed_cost"].as_f64().unwrap() + report["expected_adhoc"].as_f64().unwrap();
    assert!((total - parts).abs() < 1e-9);
    let rows = String::from_utf8(read(d.path(), "assignments.csv")).unwrap();
    assert!(rows.starts_with("scenario,request,category"));
}

#[test]
fn single_value_sweep_matches_plan_and_evaluate() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path().to_str().unwrap();
    let args = ["--config", &fixture("six_zone.json"), "--seed", "2", "--scenarios", "5", "--out", dir];
    let sweep = run(&[&["sweep", "--axis", "detour-limit", "--values", "8", "--eval-scenarios", "5"][..], &args].concat());
    assert!(sweep.status.success(), "{}", String::from_utf8_lossy(&sweep.stderr));
    let plan = run(&[&["plan"][..], &args].concat());
    assert!(plan.status.success());
    let rows = String::from_utf8(read(d.path(), "sweep.csv")).unwrap();
    let line = rows.lines().nth(1).unwrap();
    let run_json: serde_json::Value = serde_json::from_slice(&read(d.path(), "run.json")).unwrap();
    let total: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
    assert!((total - run_json["report"]["total_cost"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn grid_scan_and_fit_commands() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path().to_str().unwrap();
    let out = run(&["grid", "--config", &fixture("three_zone.json"), "--seed", "1", "--scenarios", "3", "--step", "0.5", "--out", dir]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = String::from_utf8(read(d.path(), "grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 8);
    let out = run(&["grid", "--config", &fixture("three_zone.json"), "--seed", "1", "--scenarios", "3", "--scan-step", "0.1", "--out", dir]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(read(d.path(), "scan.csv")).unwrap().lines().count(), 11);
    let out = run(&["fit-detour", "--config", &fixture("five_zone.json"), "--seed", "1", "--trials", "50", "--out", dir]);
    assert!(!out.status.success() || d.path().join("fit.json").exists());
}

#[test]
fn ingest_and_bad_input() {
    let d = tempfile::tempdir().unwrap();
    let csv = d.path().join("req.csv");
    std::fs::write(&csv, "origin_x,origin_y,dest_x,dest_y,timestamp,passengers\n10,10,290,290,0,1\n10,10,20,20,0,1\n900,900,1,1,0,1\n").unwrap();
    let out = run(&["ingest", "--config", csv.to_str().unwrap(), "--area", "0", "0", "300", "300", "--out", d.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res: serde_json::Value = serde_json::from_slice(&read(d.path(), "ingest.json")).unwrap();
    assert_eq!(res["kept"], 1);
    assert_eq!(res["dropped_intra_zone"], 1);
    assert_eq!(res["dropped_out_of_bounds"], 1);
    std::fs::write(&csv, "origin_x,origin_y,dest_x,dest_y,timestamp,passengers\n1,1,1,1,0,zero\n").unwrap();
    let out = run(&["ingest", "--config", csv.to_str().unwrap(), "--area", "0", "0", "300", "300", "--out", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn quick_check_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = run(&["check", "--quick", "--out", d.path().to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("PASS worked example: costs 10 and 13"));
}
