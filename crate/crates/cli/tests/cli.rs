//! Smoke tests driving the compiled binary end to end.

use std::fs;
use std::path::Path;
use std::process::Command;

fn calyx() -> Command {
    Command::new(env!("CARGO_BIN_EXE_calyx"))
}

fn write_small_spec(path: &Path) {
    let spec = r#"
[reference.trajectory]
fps = 3.0
speed_mm_per_s = 12.0
dwell_s = 0.5

[query.trajectory]
visit_plan = [1]
fps = 4.0
speed_mm_per_s = 20.0
dwell_s = 0.5
"#;
    fs::write(path, spec).unwrap();
}

#[test]
fn simulate_assess_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("scenario.toml");
    write_small_spec(&spec_path);

    let out = calyx()
        .args(["simulate", "--spec"])
        .arg(&spec_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "simulate failed: {}", String::from_utf8_lossy(&out.stderr));
    for artifact in [
        "phantom.ply",
        "camera.toml",
        "reference.features",
        "reference_trajectory.csv",
        "reference_cloud.ply",
        "registration.json",
        "query.features",
        "query_trajectory.csv",
        "truth_labels.json",
        "assess_config.toml",
    ] {
        assert!(dir.path().join(artifact).exists(), "missing {artifact}");
    }

    let config = dir.path().join("assess_config.toml");
    let out = calyx()
        .args(["assess", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success(), "assess failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("calyx  1"), "stdout: {stdout}");
    assert!(stdout.contains("frames:"));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["calyces"].as_array().unwrap().len(), 6);
    assert_eq!(report["threshold"], 0.45);

    let out = calyx()
        .args(["metrics", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success(), "metrics failed: {}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/metrics.json")).unwrap())
            .unwrap();
    assert!(metrics["chamfer_mean_mm"].as_f64().unwrap() < 1e-6);

    let out = calyx()
        .args(["localize", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("out/trajectory.csv").exists());
}

#[test]
fn register_identity_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let out = calyx()
        .args(["simulate", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = calyx()
        .args(["register", "--source"])
        .arg(dir.path().join("reference_cloud.ply"))
        .arg("--target")
        .arg(dir.path().join("phantom.ply"))
        .arg("--out")
        .arg(dir.path().join("reg.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("reg.json")).unwrap()).unwrap();
    assert!(record["mean_residual_mm"].as_f64().unwrap() < 1e-6);
}

#[test]
fn bad_config_exits_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("broken.toml");
    fs::write(&config, "frame_stride = 0\n[paths]\n").unwrap();
    let out = calyx()
        .args(["assess", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "stderr: {stderr}");
}
