use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_kesten-budget");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

const SIM: &str = r#"{"params":{"q0":0.1,"a":0.5},"process":{"kind":"binary"},
"n_agents":500,"t_max":200,"snapshot_times":[10,200],"master_seed":1,"n_runs":2}"#;

const SWEEP: &str = r#"{"process":{"kind":"uniform"},"a_values":[0.5,1.0],"q_values":[0.2,0.4,0.8],
"n_agents":500,"t_measure":300,"n_runs":2,"master_seed":4}"#;

#[test]
fn simulate_writes_histograms_and_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.json", SIM);
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "snapshots.csv",
        "histogram_t10.csv",
        "histogram_t200.csv",
        "theory_density.csv",
        "summary.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let snaps = fs::read_to_string(out.join("snapshots.csv")).unwrap();
    assert_eq!(snaps.lines().next(), Some("run,time,agent,budget"));
    assert_eq!(snaps.lines().count(), 1 + 2 * 2 * 500);
    let hist = fs::read_to_string(out.join("histogram_t200.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("bin_low,bin_high,count,density"));
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.json", SIM);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()])
        .status
        .success());
    assert!(run(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "2"
    ])
    .status
    .success());
    assert_ne!(
        fs::read(a.join("snapshots.csv")).unwrap(),
        fs::read(b.join("snapshots.csv")).unwrap()
    );
}

#[test]
fn sweep_reports_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.json", SWEEP);
    let out = dir.path().join("out");
    let o = run(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("sweep.json")).unwrap()).unwrap();
    let rows = json["rows"].as_array().unwrap().len();
    let excluded = json["excluded"].as_array().unwrap().len();
    assert_eq!(rows + excluded, 6);
    assert_eq!(json["theory_c"].as_f64().unwrap(), 3.0);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("a,q0,a_over_q0_sq,x_mp,spread"));
    assert_eq!(csv.lines().count(), 1 + rows);
}

#[test]
fn compare_emits_report_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.json", SWEEP);
    let sweep_out = dir.path().join("sw");
    assert!(run(&["sweep", "--config", &cfg, "--out", sweep_out.to_str().unwrap()])
        .status
        .success());
    let cmp = write(
        dir.path(),
        "cmp.json",
        r#"{"sweep_result":"sw/sweep.json","process":{"kind":"uniform"},"q0":0.3,"a":1,"n_agents":3000,"t_measure":1000}"#,
    );
    let out = dir.path().join("cmp");
    let o = run(&["compare", "--config", &cmp, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("compare.json")).unwrap()).unwrap();
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    for k in [
        "fitted_c",
        "theory_c",
        "relative_deviation",
        "tail_mu_hat",
        "theory_mu",
        "ks_distance",
    ] {
        assert!(keys.contains(&k), "{k}");
    }
    assert_eq!(keys.len(), 6);

    let wrong = write(
        dir.path(),
        "wrong.json",
        r#"{"sweep_result":"sw/sweep.json","process":{"kind":"binary"},"q0":0.3,"a":1}"#,
    );
    assert_eq!(run(&["compare", "--config", &wrong]).status.code(), Some(2));
}

#[test]
fn theory_prints_all_fields() {
    let o = run(&[
        "theory",
        "--process",
        r#"{"kind":"binary"}"#,
        "--q0",
        "0.1",
        "--a",
        "0.5",
    ]);
    assert!(o.status.success());
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((json["mu"].as_f64().unwrap() - 0.998).abs() < 1e-3);
    assert!((json["x_mp_exact"].as_f64().unwrap() - 49.7).abs() < 0.05);
    assert_eq!(json["c"].as_f64().unwrap(), 1.0);
    for k in ["mean_log_lambda", "D", "x_mp_paper", "x_mp_approx"] {
        assert!(json.get(k).is_some(), "{k}");
    }
    let o = run(&[
        "theory",
        "--process",
        r#"{"kind":"arch1","alpha0":0.1,"alpha1":0.1}"#,
        "--q0",
        "0.1",
        "--a",
        "0.5",
    ]);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((json["c"].as_f64().unwrap() - 9.0).abs() < 1e-12);
}

#[test]
fn exit_codes_follow_contract() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| run(args).status.code();

    // malformed config: unknown field, with the field named on stderr
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"params":{"q0":0.1,"a":0.5},"process":{"kind":"binary"},"n_agent":5}"#,
    );
    let o = run(&["simulate", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_agent"));

    let empty = write(
        dir.path(),
        "empty.json",
        r#"{"params":{"q0":0.1,"a":0.5},"process":{"kind":"binary"},"snapshot_times":[]}"#,
    );
    assert_eq!(code(&["simulate", "--config", &empty]), Some(2));

    let missing = dir.path().join("nope.json");
    assert_eq!(code(&["simulate", "--config", missing.to_str().unwrap()]), Some(3));

    let cmp = write(
        dir.path(),
        "cmp.json",
        r#"{"sweep_result":"absent/sweep.json","process":{"kind":"binary"},"q0":0.1,"a":1}"#,
    );
    assert_eq!(code(&["compare", "--config", &cmp]), Some(3));

    // q0 = 0 is a parameter error; a zero multiplier is a domain error
    assert_eq!(
        code(&["theory", "--process", r#"{"kind":"binary"}"#, "--q0", "0", "--a", "1"]),
        Some(2)
    );
    assert_eq!(
        code(&["theory", "--process", r#"{"kind":"binary"}"#, "--q0", "1", "--a", "1"]),
        Some(4)
    );
    let mut_out = dir.path().join("unwritable");
    fs::write(&mut_out, "file, not a directory").unwrap();
    let sim = write(dir.path(), "sim.json", SIM);
    assert_eq!(
        code(&["simulate", "--config", &sim, "--out", mut_out.to_str().unwrap()]),
        Some(3)
    );
}
