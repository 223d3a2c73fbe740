use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "symbols = 4\nbeta_grid = 0.6, 1.4, 0.4\nz_grid = 1, 2, 1\nrestarts = 3\ntrials = 5\n";

fn oamap(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("run.conf");
    if !config.exists() {
        std::fs::write(&config, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_oamap"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn design_writes_constellation_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = oamap(dir.path(), &["design", "--beta", "1.0", "--z", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/design.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "oamap-report 1");
    assert!(report["d_min"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("out/constellation.txt").exists());
}

#[test]
fn map_then_gain_field() {
    let dir = tempfile::tempdir().unwrap();
    assert!(oamap(dir.path(), &["map"]).status.success());
    for name in ["map.txt", "assignments.csv", "map.json"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
    assert!(oamap(dir.path(), &["gain-field"]).status.success());
    let csv = std::fs::read_to_string(dir.path().join("out/gain_field.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 4);
}

#[test]
fn verify_and_ser_succeed_on_small_runs() {
    let dir = tempfile::tempdir().unwrap();
    for theorem in ["1", "2", "chains"] {
        let out = oamap(dir.path(), &["verify", "--theorem", theorem, "--samples", "3"]);
        assert!(out.status.success(), "{theorem}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = oamap(dir.path(), &["ser", "--beta", "1", "--z", "2", "--trials", "2000", "--baseline"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/ser.json").exists());
}

#[test]
fn validation_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = oamap(dir.path(), &["design", "--z", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = oamap(dir.path(), &["design", "--beta", "1", "--z", "2", "--power-vector", "1,x"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("run.conf"), "symbols = 12\n").unwrap();
    let out = oamap(dir.path(), &["map"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("oamap: "));
}

#[test]
fn missing_config_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_oamap"))
        .args(["--config", "/nonexistent/run.conf", "map"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    drop(dir);
}
