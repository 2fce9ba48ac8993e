//! End-to-end checks of the command-line surface: exit codes, config
//! validation, artifact emission, and the machine-readable summary line.

use std::path::Path;
use std::process::{Command, Output};

fn typeone() -> Command {
    Command::new(env!("CARGO_BIN_EXE_typeone"))
}

fn result_line(output: &Output) -> serde_json::Value {
    let stdout = String::from_utf8_lossy(&output.stdout);
    let line = stdout
        .lines()
        .find(|l| l.starts_with("RESULT "))
        .unwrap_or_else(|| panic!("no RESULT line in: {stdout}"));
    serde_json::from_str(line.trim_start_matches("RESULT ")).expect("summary is valid JSON")
}

#[test]
fn gradcheck_passes_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = typeone()
        .args(["--out", dir.path().to_str().unwrap(), "gradcheck"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = result_line(&out);
    assert_eq!(summary["all_pass"], true);
    assert!(dir.path().join("config.resolved.json").exists());
    assert!(dir.path().join("gradcheck.txt").exists());
}

#[test]
fn unknown_config_key_is_exit_two_and_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nwibble_factor = 3\n").unwrap();
    let out = typeone()
        .args(["--config", cfg.to_str().unwrap(), "gradcheck"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("wibble_factor"), "stderr: {stderr}");
}

#[test]
fn command_pin_mismatch_is_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pin.toml");
    std::fs::write(&cfg, "command = \"sphere\"\n").unwrap();
    let out = typeone()
        .args(["--config", cfg.to_str().unwrap(), "gradcheck"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = typeone()
        .args([
            "--out",
            dir.path().to_str().unwrap(),
            "attack",
            "--bundle",
            "/nonexistent/bundle",
            "--classifier",
            "/nonexistent/clf",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn json_configs_are_accepted_too() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ok.json");
    std::fs::write(&cfg, r#"{ "seed": 9, "command": "gradcheck" }"#).unwrap();
    let out = typeone()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("run").to_str().unwrap(),
            "gradcheck",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let summary = result_line(&out);
    assert_eq!(summary["seed"], 9);
}

#[test]
fn make_data_writes_loadable_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("data.toml");
    std::fs::write(
        &cfg,
        "[data]\nsource = \"synthetic\"\ntrain_count = 64\ntest_count = 16\n",
    )
    .unwrap();
    let out_dir = dir.path().join("data");
    let out = typeone()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "make-data",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = result_line(&out);
    assert_eq!(summary["train_count"], 64);
    let loaded = typeone::data::load_mnist_idx::<f32>(
        &out_dir.join("train-images-idx3-ubyte"),
        &out_dir.join("train-labels-idx1-ubyte"),
    )
    .unwrap();
    assert_eq!(loaded.count(), 64);
    assert_eq!(loaded.rows, 28);
}

#[test]
fn sphere_small_run_summary_has_full_analytic_success() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sphere.toml");
    std::fs::write(
        &cfg,
        "[sphere]\nn = 20\nh = 18\ntrain_steps = 6000\nbatch_size = 32\n",
    )
    .unwrap();
    let out = typeone()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("run").to_str().unwrap(),
            "--seed",
            "5",
            "sphere",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = result_line(&out);
    assert_eq!(summary["analytic_success_rate"], 1.0);
    assert!(summary["held_out_error"].as_f64().unwrap() < 0.05);
    assert!(dir.path().join("run/trajectory-0.csv").exists());
}

#[test]
fn output_root_env_variable_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let out = typeone()
        .env("TYPEONE_OUT", dir.path())
        .args(["--seed", "3", "gradcheck"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("gradcheck-seed3/config.resolved.json").exists());
}
