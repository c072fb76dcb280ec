use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nldae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nldae")).args(args).output().expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn err_json(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().find(|l| l.starts_with('{')).expect("error JSON");
    serde_json::from_str(line).unwrap()
}

fn data(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel).display().to_string()
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

const SMALL_CHAIN: [&str; 8] = ["--chain", "20", "--length", "500", "--diameter", "0.6", "--roughness", "1e-5"];

#[test]
fn one_pipe_decoupled_run_settles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = nldae(&[
        "simulate", "--chain", "1", "--length", "1000", "--diameter", "0.5", "--lambda", "0.01",
        "--supply", "5e6", "--demand", "20", "--init", "rest", "--dt", "1", "--t-end", "600",
        "--model", "decoupled", "--out", out.to_str().unwrap(),
    ]);
    let manifest = ok_json(&o);
    assert_eq!(manifest["dimensions"]["n"], 4);
    let (header, rows) = csv_rows(&out.join("trajectory.csv"));
    assert_eq!(header, "t,y_1,y_2");
    assert_eq!(rows.len(), 601);
    let last = rows.last().unwrap();
    let prev = &rows[rows.len() - 11];
    assert!((last[1] - 20.0).abs() < 1e-6, "supply flow {}", last[1]);
    assert!((last[2] - prev[2]).abs() < 1e-6 * last[2]);
}

#[test]
fn compare_full_models_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let mut args = vec!["compare"];
    args.extend(SMALL_CHAIN);
    args.extend(["--supply", "60e5", "--demand", "30", "--dt", "5", "--t-end", "300", "--out", out.to_str().unwrap()]);
    let v = ok_json(&nldae(&args));
    let pairs = v["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 3);
    for p in pairs {
        assert!(p["output_error"].as_f64().unwrap() < 1e-4, "{p}");
    }
    let (header, rows) = csv_rows(&out.join("merged.csv"));
    assert_eq!(header, "t,y_1_dae,y_2_dae,y_1_ode,y_2_ode,y_1_decoupled,y_2_decoupled");
    assert_eq!(rows.len(), 61);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dimensions"]["n_p"], 40);
}

#[test]
fn ipod_summary_row_reports_total_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("red");
    let scenario = dir.path().join("sc.json");
    fs::write(
        &scenario,
        r#"{"t_end": 2000, "dt": 10, "supply": [{"node": "S", "signal": 60e5}],
            "demand": [{"node": 20, "signal": [[0, 20], [500, 20], [600, 35], [1200, 35], [1300, 25]]}]}"#,
    )
    .unwrap();
    let mut args = vec!["reduce"];
    args.extend(SMALL_CHAIN);
    args.extend(["--scenario", scenario.to_str().unwrap(), "--model", "ipod", "--rp", "2", "--rq", "4"]);
    args.extend(["--bundle", "--sweep", "1,2", "--out", out.to_str().unwrap()]);
    let o = nldae(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("ROM,r,% Red.,Output error,Speed-up\nI-POD,6,"), "{stdout}");
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["r"], 6);
    assert_eq!(summary["sizes"]["r_p"], 2);
    assert!((summary["percent_reduction"].as_f64().unwrap() - 100.0 * (1.0 - 6.0 / 61.0)).abs() < 1e-12);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("bundle/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["r_p"], 2);
    let (header, rows) = csv_rows(&out.join("sweep.csv"));
    assert_eq!(header, "size,r,pressure_error,flow_error,output_error");
    assert_eq!(rows.len(), 2);
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = nldae(&[
            "simulate", "--network", &data("networks/ex1_n25.json"), "--scenario", &data("scenarios/ex1_n25.json"),
            "--t-end", "200", "--init", "rest", "--model", "ode", "--out", out.to_str().unwrap(),
        ]);
        ok_json(&o);
        fs::read(out.join("trajectory.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn export_single_run_passes_through() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok_json(&nldae(&[
        "simulate", "--chain", "3", "--dt", "2", "--t-end", "20", "--model", "dae", "--out", run.to_str().unwrap(),
    ]));
    let merged = dir.path().join("merged");
    let m = ok_json(&nldae(&["export", "--run", run.to_str().unwrap(), "--out", merged.to_str().unwrap()]));
    assert_eq!(m["runs"][0], "dae");
    assert_eq!(fs::read(run.join("trajectory.csv")).unwrap(), fs::read(merged.join("merged.csv")).unwrap());
    assert_eq!(m["dimensions"]["n"], 10);
}

#[test]
fn export_lists_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let e = err_json(&nldae(&["export", "--run", empty.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]), 2);
    assert_eq!(e["error"], "MissingArtifacts");
    assert_eq!(e["missing"].as_array().unwrap().len(), 2);
}

#[test]
fn analyze_reports_example_dimensions() {
    let v = ok_json(&nldae(&["analyze", "--chain", "5000", "--length", "0.726", "--roughness", "1e-6", "--rs", "1530"]));
    let d = &v["dimensions"];
    assert_eq!((d["n"].as_u64(), d["n_p"].as_u64(), d["n_q"].as_u64(), d["n_tilde"].as_u64()),
               (Some(15001), Some(10000), Some(5001), Some(10000)));
    let v = ok_json(&nldae(&["analyze", "--network", &data("networks/ex3_n55.json"), "--spectrum", "--projectors"]));
    assert_eq!(v["dimensions"]["n"], 55);
    assert_eq!(v["projector_chain"]["index"], 1);
    let s = &v["spectrum"];
    for m in ["ode", "decoupled"] {
        let a = s["dae"]["lambda_max_im"].as_f64().unwrap();
        let b = s[m]["lambda_max_im"].as_f64().unwrap();
        assert!((a - b).abs() <= 1e-8 * a, "{m}: {a} vs {b}");
    }
}

#[test]
fn exit_codes_separate_input_and_numerical_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"nodes\": [}").unwrap();
    let e = err_json(&nldae(&["analyze", "--network", bad.to_str().unwrap()]), 2);
    assert_eq!(e["error"], "Parse");
    let out = dir.path().join("x");
    let e = err_json(&nldae(&["simulate", "--chain", "2", "--dt=-1", "--out", out.to_str().unwrap()]), 2);
    assert_eq!(e["error"], "InvalidArgument");
    let mut args = vec!["reduce"];
    args.extend(SMALL_CHAIN);
    args.extend(["--dt", "10", "--t-end", "50", "--model", "ipod", "--rp", "2", "--mp", "40", "--out", out.to_str().unwrap()]);
    let e = err_json(&nldae(&args), 3);
    assert_eq!(e["error"], "RankDeficiency");
    // clap's own usage errors also exit with 2
    assert_eq!(nldae(&["simulate", "--model", "nope"]).status.code(), Some(2));
}
