use std::process::{Command, Output};

fn ebwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebwave")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(code(&ebwave(&["no-such-command"])), 3);
    assert_eq!(code(&ebwave(&["estimate", "--family", "normal"])), 3);
}

#[test]
fn help_exits_cleanly() {
    let out = ebwave(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("simulate"));
}

#[test]
fn unknown_suite_is_a_config_error() {
    assert_eq!(code(&ebwave(&["verify", "--suite", "nonsense", "--depth", "8"])), 3);
}

#[test]
fn unknown_wavelet_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.bin");
    let res = ebwave(&["tabulate-basis", "--wavelet", "db99", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 3);
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
}

#[test]
fn verify_basis_suite_passes() {
    let out = ebwave(&["verify", "--suite", "basis", "--depth", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().all(|l| l.contains("[PASS]")), "{text}");
}

#[test]
fn estimate_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.txt");
    // Evenly spread points on [−3, 3]: enough mass near y for a finite estimate.
    let body: String = (0..4000).map(|i| format!("{}\n", -3.0 + 6.0 * (i as f64 + 0.5) / 4000.0)).collect();
    std::fs::write(&data, body).unwrap();
    let out = ebwave(&[
        "estimate", "--family", "normal", "--sigma", "1", "--data", data.to_str().unwrap(),
        "--y", "0", "--m", "1", "--depth", "10",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["m"], 1);
    assert!(v["t_hat"].as_f64().unwrap().is_finite());
    assert_eq!(v["n"], 4000);
}

#[test]
fn malformed_data_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.txt");
    std::fs::write(&data, "0.1\nabc\n").unwrap();
    let out = ebwave(&[
        "estimate", "--family", "normal", "--data", data.to_str().unwrap(), "--y", "0", "--m", "1",
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn simulate_rejects_unknown_config_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"family": {"family": "normal"}, "bogus": 1}"#).unwrap();
    let out = ebwave(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(code(&out), 3);
}

#[test]
fn lower_bound_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("lb.csv");
    let out = ebwave(&[
        "lower-bound", "--family", "normal", "--sigma", "1", "--prior", "normal", "--mu0", "0", "--sigma0", "1",
        "--r", "2", "--y", "0.5", "--n-grid", "1e4,1e5,1e6", "--out", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["slope"].as_f64().unwrap() < 0.0);
    let rows = std::fs::read_to_string(csv).unwrap();
    assert_eq!(rows.lines().count(), 4);
}
