use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lftgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lftgen"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/pendulum.toml").display().to_string()
}

#[test]
fn analyze_without_upstream_artifacts_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = lftgen(&["analyze", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lft.json") && stderr.contains("lftize"), "{stderr}");
}

#[test]
fn unknown_stage_is_a_usage_error() {
    let out = lftgen(&["--stage", "fly"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown stage"));
}

#[test]
fn stage_flag_and_positional_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(lftgen(&["identify", "--config", &config(), "--out", d]).status.success());
    assert!(lftgen(&["--stage", "lpvify", "--config", &config(), "--out", d]).status.success());
    assert!(dir.path().join("lpv.json").is_file());
}

#[test]
fn pipeline_then_validate_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lftgen(&["pipeline", "--config", &config(), "--out", d, "--seed", "7", "--m", "0,2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "manifest.json",
        "pnlss.json",
        "pareto.csv",
        "controller.json",
        "lpv.json",
        "lft.json",
        "training_set.csv",
        "training_set.json",
        "gendata_log.csv",
        "cfnn_m0.json",
        "lft_m0.json",
        "lpv_m2.json",
        "lft_m2.json",
        "bound_log_m0.csv",
        "bounds.json",
        "gain_report.json",
        "gain_report.csv",
        "gain_report.txt",
        "gain_report.svg",
    ] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    assert!(!dir.path().join("lft_m1.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("selected"));

    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["m"], serde_json::json!([0, 2]));

    // The manifest alone reruns a stage.
    let manifest_path = dir.path().join("manifest.json").display().to_string();
    assert!(lftgen(&["validate", "--config", &manifest_path, "--out", d]).status.success());

    let lft = dir.path().join("lft.json");
    let mut value = read_json(&lft);
    let entry = &mut value["g"]["data"][0];
    *entry = serde_json::json!(entry.as_f64().unwrap() + 0.5);
    fs::write(&lft, serde_json::to_string_pretty(&value).unwrap() + "\n").unwrap();
    let out = lftgen(&["validate", "--config", &config(), "--out", d]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
