//! Black-box tests of the `dve` binary: exit codes, output formats, and
//! the bench/report round trip on a tiny custom grid.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dve"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_config_json(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("grid.json");
    fs::write(
        &path,
        r#"{
            "regimes": [[1000, 100], [1000, 50]],
            "thetas": [0.0, 1.0],
            "qs": [0.05, 0.1],
            "reps": 2,
            "master_seed": 0,
            "estimators": ["uj1", "uj2", "sj2", "uj2a", "sh", "sh2", "sh3", "gee", "ae", "cl1", "cl2"],
            "scale_divisor": 1
        }"#,
    )
    .unwrap();
    path
}

#[test]
fn generate_uniform_exact_division() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("pop.csv");
    let out = dve(&[
        "--json",
        "generate",
        "--n",
        "1000000",
        "--alphabet",
        "1000",
        "--theta",
        "0",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["distinct"], 1000);
    assert_eq!(v["gamma_sq"], 0.0);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("pop.json")).unwrap()).unwrap();
    assert_eq!(sidecar["D"], 1000);
    assert_eq!(sidecar["gamma_sq"], 0.0);
}

#[test]
fn generate_small_example_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("pop.csv");
    let out = dve(&[
        "generate",
        "--n",
        "10",
        "--alphabet",
        "4",
        "--theta",
        "0",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(&out_path).unwrap();
    assert_eq!(csv, "rank,size\n1,3\n2,3\n3,2\n4,2\n");
}

#[test]
fn generate_rejects_n_below_a() {
    let out = dve(&["generate", "--n", "5", "--alphabet", "10", "--out", "/tmp/unused.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("N must be >= A"));
}

#[test]
fn estimate_profile_gee() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("profile.csv");
    fs::write(&profile, "frequency,count\n1,5\n2,10\n").unwrap();
    let out = dve(&[
        "estimate",
        "--profile",
        profile.to_str().unwrap(),
        "--total",
        "100",
        "--q",
        "0.25",
        "--estimator",
        "gee",
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("gee    20"));
}

#[test]
fn estimate_all_lists_eleven() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("profile.csv");
    fs::write(&profile, "frequency,count\n1,5\n2,10\n").unwrap();
    let out = dve(&[
        "--json",
        "estimate",
        "--profile",
        profile.to_str().unwrap(),
        "--total",
        "100",
        "--q",
        "0.25",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 11);
    let uj1 = &v["results"][0];
    assert_eq!(uj1["estimator"], "uj1");
    assert!((uj1["estimate"].as_f64().unwrap() - 17.647).abs() < 1e-3);
}

#[test]
fn estimate_values_file_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("values.txt");
    // 3 distinct values with counts 1, 2, 3 → n = 6, d = 3.
    fs::write(&input, "a\nb\nb\nc\nc\nc\n").unwrap();
    let out = dve(&[
        "--json",
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--total",
        "60",
        "--estimator",
        "gee",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["n"], 6);
    assert_eq!(v["d"], 3);
    assert_eq!(v["q"], 0.1);
    // GEE = sqrt(10)·1 + 2.
    let gee = v["results"][0]["estimate"].as_f64().unwrap();
    assert!((gee - (10f64.sqrt() + 2.0)).abs() < 1e-9);
}

#[test]
fn estimate_total_below_sample_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("values.txt");
    fs::write(&input, "x\n".repeat(25)).unwrap();
    let out = dve(&["estimate", "--input", input.to_str().unwrap(), "--total", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_unknown_preset_lists_presets() {
    let out = dve(&["bench", "--preset", "bogus", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    for name in ["paper-full", "paper-mini", "paper-1m-row"] {
        assert!(err.contains(name), "missing {name} in: {err}");
    }
}

#[test]
fn bench_seed_echoed_when_omitted() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config_json(dir.path());
    let store = dir.path().join("store");
    let out = dve(&[
        "--json",
        "bench",
        "--config",
        config.to_str().unwrap(),
        "--out",
        store.to_str().unwrap(),
        "--parallelism",
        "2",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["seed"].is_u64());
    assert_eq!(v["records"], 2 * 2 * 2 * 2 * 11);
}

#[test]
fn bench_round_trip_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config_json(dir.path());
    let store = dir.path().join("store");
    let run = |args: &[&str]| {
        let out = dve(args);
        assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
        out
    };
    run(&[
        "bench",
        "--config",
        config.to_str().unwrap(),
        "--out",
        store.to_str().unwrap(),
        "--seed",
        "7",
        "--parallelism",
        "2",
    ]);
    let first = fs::read(store.join("records.csv")).unwrap();
    // Second run with a matching store resumes and leaves records identical.
    let out = run(&[
        "--json",
        "bench",
        "--config",
        config.to_str().unwrap(),
        "--out",
        store.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["resumed"], true);
    assert_eq!(first, fs::read(store.join("records.csv")).unwrap());

    run(&["report", "--records", store.to_str().unwrap(), "--kind", "tables"]);
    run(&[
        "report",
        "--records",
        store.to_str().unwrap(),
        "--kind",
        "surface",
        "--estimator",
        "uj1",
    ]);
    run(&[
        "report",
        "--records",
        store.to_str().unwrap(),
        "--kind",
        "2d",
        "--q",
        "0.05",
    ]);
    let reports = store.join("reports");
    for name in [
        "thresholds.csv",
        "thresholds.json",
        "thresholds.txt",
        "ratio_error.csv",
        "pct_bias.csv",
        "pct_rmse.csv",
        "bias_surface_uj1.svg",
        "estimate_vs_actual_q0.05.svg",
    ] {
        assert!(reports.join(name).exists(), "missing report file {name}");
    }
}

#[test]
fn report_on_empty_dir_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dve(&["report", "--records", dir.path().to_str().unwrap(), "--kind", "tables"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn presets_command_lists_all() {
    let out = dve(&["presets"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["paper-full", "paper-mini", "paper-1m-row"] {
        assert!(text.contains(name));
    }
}
