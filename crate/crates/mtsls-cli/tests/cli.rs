use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn mtsls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtsls"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mtsls(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    p
}

#[test]
fn diagnose_worked_example_reports_the_cross_weight() {
    let dir = tempfile::tempdir().unwrap();
    let example = data_file("worked_example.json");
    ok(&["diagnose", "--config", s(&example), "--out", s(dir.path())]);
    let report = json(&dir.path().join("diagnose.json"));
    assert_eq!(report["command"], "diagnose");
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);

    let ident = &report["result"]["identification"];
    assert_eq!(ident["proper"], false);
    let types = ident["types"].as_array().unwrap();
    assert_eq!(types.len(), 8);
    let bad = types.iter().find(|t| t["assignment"] == serde_json::json!([2, 1, 2])).unwrap();
    let w = &bad["weights"];
    assert!(w[0][1].as_f64().unwrap() < -1.0, "cross weight {}", w[0][1]);
    assert_eq!(bad["nce"][0][1], false);
    let index = bad["type_index"].clone();
    let violations = ident["violations"].as_array().unwrap();
    assert!(violations.iter().any(|v| v["type_index"] == index && v["kind"] == "nce"));

    let text = std::fs::read_to_string(dir.path().join("diagnose.txt")).unwrap();
    assert!(text.contains("(2,1,2)"));
}

#[test]
fn estimate_recovers_homogeneous_effects_without_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = json(&data_file("worked_example.json"));
    for t in cfg["population"]["types"].as_array_mut().unwrap() {
        t["beta"] = serde_json::json!([1.5, -0.7]);
        t["y0"] = serde_json::json!(0.25);
    }
    cfg["noise_sd"] = serde_json::json!(0.0);
    cfg["n"] = serde_json::json!(5000);
    let config = write_config(dir.path(), "homogeneous.json", &cfg);
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&config), "--out", s(&sim)]);
    let est = dir.path().join("est");
    ok(&["estimate", "--data", s(&sim.join("data.csv")), "--out", s(&est)]);
    let beta = &json(&est.join("estimate.json"))["result"]["beta_hat"];
    assert!((beta[0].as_f64().unwrap() - 1.5).abs() < 1e-8);
    assert!((beta[1].as_f64().unwrap() + 0.7).abs() < 1e-8);
}

#[test]
fn subsample_test_on_judge_data_has_the_panel_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = json(&data_file("judges.json"));
    cfg["n"] = serde_json::json!(20000);
    let config = write_config(dir.path(), "judges.json", &cfg);
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&config), "--out", s(&sim)]);
    let header = std::fs::read_to_string(sim.join("data.csv")).unwrap();
    assert!(header.lines().next().unwrap().ends_with(",employed"));

    let out = dir.path().join("test");
    ok(&[
        "test",
        "--kind",
        "subsample",
        "--flag",
        "employed",
        "--coding",
        "ordered",
        "--data",
        s(&sim.join("data.csv")),
        "--out",
        s(&out),
    ]);
    let text = std::fs::read_to_string(out.join("test-subsample.txt")).unwrap();
    for needle in ["D_1", "D_2", "P_1", "P_2", "η_11", "η_22", "off-diagonal η = 0 (joint)"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
    let report = json(&out.join("test-subsample.json"));
    assert_eq!(report["result"]["coefficients"].as_array().unwrap().len(), 4);
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let example = data_file("worked_example.json");
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        ok(&["simulate", "--config", s(&example), "--out", s(&out), "--threads", threads]);
        let test = out.join("covary");
        let cells: String = std::fs::read_to_string(out.join("data.csv"))
            .unwrap()
            .lines()
            .enumerate()
            .map(|(i, l)| {
                let cell = if i == 0 { "court" } else if i % 2 == 0 { "a" } else { "b" };
                format!("{l},{cell}\n")
            })
            .collect();
        std::fs::write(out.join("cells.csv"), cells).unwrap();
        ok(&[
            "test",
            "--kind",
            "covary",
            "--fe",
            "court",
            "--boot",
            "49",
            "--seed",
            "3",
            "--data",
            s(&out.join("cells.csv")),
            "--out",
            s(&test),
            "--threads",
            threads,
        ]);
        (
            std::fs::read(out.join("simulate.json")).unwrap(),
            std::fs::read(out.join("data.csv")).unwrap(),
            std::fs::read(test.join("test-covary.json")).unwrap(),
        )
    };
    let a = run("a", "1");
    let b = run("b", "3");
    assert!(a.0 == b.0 && a.1 == b.1 && a.2 == b.2);
}

#[test]
fn reports_are_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let example = data_file("worked_example.json");
    let args = ["decompose", "--config", s(&example), "--out", s(dir.path())];
    ok(&args);
    let again = mtsls(&args);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn validation_errors_exit_with_one_and_name_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "y,t,z_1\n1.0,0,0\n2.0,1,1\n").unwrap();
    let out = mtsls(&["estimate", "--data", s(&csv), "--fe", "court", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv") && err.contains("\"court\""), "{err}");

    std::fs::write(&csv, "y,t,z_1\n1.0,0,0\n2.0,x,1\n").unwrap();
    let out = mtsls(&["estimate", "--data", s(&csv), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = mtsls(&["simulate", "--config", s(&data_file("judges.json")), "--out", s(&dir.path().join("o"))]);
    assert!(out.status.success(), "the bundled judge config carries its own seed");
    let mut cfg = json(&data_file("judges.json"));
    cfg.as_object_mut().unwrap().remove("seed");
    let config = write_config(dir.path(), "noseed.json", &cfg);
    let out = mtsls(&["simulate", "--config", s(&config), "--out", s(&dir.path().join("p"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn rank_failure_exits_with_two_and_names_the_assumption() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flat.csv");
    let mut body = String::from("y,t,z_1\n");
    for i in 0..50 {
        body.push_str(&format!("{},{},1\n", i as f64 * 0.1, i % 3));
    }
    std::fs::write(&csv, body).unwrap();
    let out = mtsls(&["estimate", "--data", s(&csv), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Assumption 2: rank"), "{err}");
}
