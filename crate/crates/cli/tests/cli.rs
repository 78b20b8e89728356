use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mscs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mscs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn galaxy_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/galaxy.txt")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn fit_k1_is_the_sample_moments() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "d.txt", "value\n1.0\n2.0\n4.0\n5.0\n");
    let r = stdout_json(&mscs(&["fit", &f, "-k", "1"]));
    let p = &r["result"]["params"];
    assert_eq!(p["means"][0].as_f64().unwrap(), 3.0);
    assert_eq!(p["variances"][0].as_f64().unwrap(), 2.5);
    assert_eq!(r["manifest"]["command"], "fit");
    assert_eq!(r["manifest"]["input_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn galaxy_fit_has_ascending_means() {
    let g = galaxy_path();
    let r = stdout_json(&mscs(&["fit", g.to_str().unwrap(), "-k", "4"]));
    let means: Vec<f64> = r["result"]["params"]["means"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(means.len(), 4);
    assert!(means.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn parse_error_names_the_line_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.txt", "# data\n1.5\n2.5\nnot-a-number\n3.5\n");
    let o = mscs(&["fit", &f, "-k", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");
    assert!(err.contains("not-a-number"), "{err}");
}

#[test]
fn too_few_points_for_k_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "d.txt", "1\n2\n3\n4\n");
    assert_eq!(mscs(&["fit", &f, "-k", "2"]).status.code(), Some(2));
}

#[test]
fn zero_replicates_is_a_validation_error() {
    let o = mscs(&["simulate", "--scenario", "1", "--n", "100", "--B", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_penalty_is_rejected() {
    let g = galaxy_path();
    let o = mscs(&["mscs", g.to_str().unwrap(), "--penalty", "xic"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let args = [
        "simulate", "--scenario", "1", "--n", "100", "--alpha", "0.10", "--B", "4", "--seed", "7",
        "--restarts", "3", "--mc-draws", "10000", "--kmax", "4",
    ];
    let a = mscs(&args);
    let b = mscs(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let r: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(r["result"]["results"][0]["replicates"], 4);
}

#[test]
fn simulate_reads_a_partial_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"scenario": 3, "n": 60, "replicates": 2, "k_max": 3, "mc_draws": 10000, "em": {"n_restarts": 2}}"#,
    );
    let r = stdout_json(&mscs(&["simulate", "--config", &cfg]));
    assert_eq!(r["result"]["config"]["scenario"], 3);
    assert_eq!(r["result"]["config"]["em"]["max_iter"], 500);
    assert_eq!(r["result"]["results"][0]["replicates"], 2);
}

#[test]
fn mscs_report_round_trips_at_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let g = galaxy_path();
    let out = dir.path().join("m.json");
    let o = mscs(&[
        "mscs", g.to_str().unwrap(), "--kmax", "5", "--restarts", "5", "--mc-draws", "10000",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let again: Value = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
    assert_eq!(again, v);
    let ll = v["result"]["mscs"]["fits"][2]["loglik"].as_f64().unwrap();
    assert!(text.contains(&format!("{ll:?}")), "{ll:?} not printed at full precision");
    let m = &v["result"]["mscs"];
    let k_hat = m["k_hat"].as_u64().unwrap();
    assert!(m["gamma"].as_array().unwrap().iter().any(|k| k.as_u64() == Some(k_hat)));
    assert_eq!(m["records"].as_array().unwrap().len(), 5);

    // Rerunning the manifest's command reproduces the file byte for byte.
    let out2 = dir.path().join("m2.json");
    mscs(&[
        "mscs", g.to_str().unwrap(), "--kmax", "5", "--restarts", "5", "--mc-draws", "10000",
        "--out", out2.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());

    let csv = mscs(&["plot-density", "--report", out.to_str().unwrap(), "--orders", "3,4,5", "--points", "16"]);
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x,density_k3,density_k4,density_k5");
    assert_eq!(text.lines().count(), 17);
}

#[test]
fn kmax_above_n_over_3_is_capped() {
    let dir = tempfile::tempdir().unwrap();
    let values: String = (0..25).map(|i| format!("{}\n", (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.1)).collect();
    let f = write(dir.path(), "d.txt", &values);
    let r = stdout_json(&mscs(&["mscs", &f, "--kmax", "10", "--restarts", "3", "--mc-draws", "10000"]));
    assert_eq!(r["result"]["mscs"]["k_max"], 8);
    assert_eq!(r["manifest"]["options"]["k_max"], 8);
    assert!(!r["result"]["mscs"]["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn scenario_curve_has_512_rows() {
    let o = mscs(&["plot-density", "--scenario", "1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,density_k2");
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let mut it = l.split(',').map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 512);
    let area: f64 = rows.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    assert!((area - 1.0).abs() < 1e-3, "{area}");
}

#[test]
fn two_point_grid_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let g = galaxy_path();
    let hist = dir.path().join("h.csv");
    let o = mscs(&[
        "plot-density", "--scenario", "2", "--points", "2", "--data", g.to_str().unwrap(),
        "--hist-out", hist.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 3);
    let h = std::fs::read_to_string(&hist).unwrap();
    let total: usize = h.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 82);
}

#[test]
fn one_point_grid_is_rejected() {
    let o = mscs(&["plot-density", "--scenario", "1", "--points", "1"]);
    assert_eq!(o.status.code(), Some(2));
}
