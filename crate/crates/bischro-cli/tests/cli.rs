//! End-to-end tests of the `bischro` binary: exit codes, artifact layout,
//! manifest integrity, determinism, and configuration precedence.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bischro"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{path:?}: {e}"));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{path:?}: invalid json: {e}"))
}

#[test]
fn verify_prints_a_passing_report_to_stdout() {
    let out = run(&["verify", "--samples", "40", "--seed", "3"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("stdout is a json report");
    let rows = report.as_array().expect("array of rows");
    assert_eq!(rows.len(), 20);
    for row in rows {
        assert_eq!(row["pass"], serde_json::Value::Bool(true), "row: {row}");
    }
}

#[test]
fn verify_writes_identity_report_and_valid_manifest() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_dir = dir.path().join("v");
    let out = run(&[
        "verify",
        "--backend",
        "grassmann",
        "--n",
        "3",
        "--k",
        "1",
        "--samples",
        "10",
        "--seed",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));

    let report = read_json(&out_dir.join("identities-grassmann-3-1.json"));
    assert_eq!(report.as_array().expect("rows").len(), 20);
    let summary = read_json(&out_dir.join("summary.json"));
    assert_eq!(summary["status"], "pass");
    assert_eq!(summary["backend"], "grassmann-3-1");

    // Every manifest entry must match the sha-256 of the file on disk, and
    // every file except the manifest itself must be listed.
    let manifest = read_json(&out_dir.join("manifest.json"));
    let files = manifest["files"].as_object().expect("files map");
    let mut on_disk: Vec<String> = std::fs::read_dir(&out_dir)
        .expect("read dir")
        .map(|e| e.expect("entry").file_name().into_string().expect("utf8"))
        .filter(|name| name != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = files.keys().cloned().collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    for (name, recorded) in files {
        let bytes = std::fs::read(out_dir.join(name)).expect("read artifact");
        let digest = hex::encode(Sha256::digest(&bytes));
        assert_eq!(recorded.as_str().expect("hex string"), digest, "{name}");
    }
}

fn uniqueness_args(out_dir: &Path) -> Vec<String> {
    [
        "uniqueness",
        "--grid",
        "32",
        "--dt",
        "2e-5",
        "--t-end",
        "2e-4",
        "--stride",
        "2",
        "--modes",
        "2,4",
        "--eps",
        "1e-5",
        "--seed",
        "9",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out_dir.to_str().unwrap().to_string()])
    .collect()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("read dir")
        .map(|e| {
            let e = e.expect("entry");
            let name = e.file_name().into_string().expect("utf8");
            let bytes = std::fs::read(e.path()).expect("read file");
            (name, bytes)
        })
        .collect()
}

#[test]
fn same_seed_runs_are_byte_identical_across_worker_caps() {
    let dir = tempfile::tempdir().expect("tempdir");
    let a = dir.path().join("a");
    let b = dir.path().join("b");

    let out = bin()
        .args(uniqueness_args(&a))
        .env("BISCHRO_THREADS", "1")
        .output()
        .expect("binary runs");
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let out = bin()
        .args(uniqueness_args(&b))
        .env("BISCHRO_THREADS", "4")
        .output()
        .expect("binary runs");
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));

    let bytes_a = dir_bytes(&a);
    let bytes_b = dir_bytes(&b);
    let names: Vec<&String> = bytes_a.keys().collect();
    assert!(names.iter().any(|n| n.as_str() == "pair-mode-2.csv"));
    assert!(names.iter().any(|n| n.as_str() == "loss.json"));
    assert_eq!(bytes_a, bytes_b, "artifacts differ between worker caps");
}

#[test]
fn unstable_uniqueness_step_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_dir = dir.path().join("u");
    let out = run(&[
        "uniqueness",
        "--grid",
        "64",
        "--dt",
        "1e-3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(
        stderr_text(&out).contains("stability"),
        "stderr: {}",
        stderr_text(&out)
    );
    assert!(!out_dir.exists(), "rejected run must not create outputs");
}

#[test]
fn sub_noise_perturbation_reports_check_failure() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_dir = dir.path().join("tiny");
    let out = run(&[
        "uniqueness",
        "--grid",
        "32",
        "--dt",
        "2e-5",
        "--t-end",
        "1e-4",
        "--stride",
        "1",
        "--modes",
        "2",
        "--eps",
        "1e-12",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "stderr: {}", stderr_text(&out));
    let summary = read_json(&out_dir.join("summary.json"));
    assert_eq!(summary["status"], "check-failed");
}

#[test]
fn unknown_config_key_is_fatal() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "grid = 32\nmystery = 1\n").expect("write config");
    let out_dir = dir.path().join("x");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(
        stderr_text(&out).contains("mystery"),
        "stderr: {}",
        stderr_text(&out)
    );
    assert!(!out_dir.exists());
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "grid = 16\ndt = 2e-5\nt-end = 2e-4\nstride = 5\nseed = 11\n",
    )
    .expect("write config");
    let out_dir = dir.path().join("sim");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--grid",
        "32",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let summary = read_json(&out_dir.join("summary.json"));
    assert_eq!(summary["solver"]["n"], 32, "flag must beat the file value");
    assert_eq!(summary["solver"]["seed"], 11, "file value must beat default");
    // The default coefficients come from the bending energy, so the summary
    // records their energy provenance.
    assert_eq!(summary["params"]["a"], 1.0);
    assert_eq!(summary["params"]["energy"]["beta"], 1.0);
    assert!(out_dir.join("curve-initial.csv").exists());
    assert!(out_dir.join("curve-final.csv").exists());
    assert!(out_dir.join("energies.csv").exists());
}

#[test]
fn contradictory_coefficient_sources_are_rejected() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_dir = dir.path().join("x");
    let out = run(&[
        "simulate",
        "--params",
        "1,0,1,0.5",
        "--energy-params",
        "0,1,0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(
        stderr_text(&out).contains("contradict"),
        "stderr: {}",
        stderr_text(&out)
    );
    assert!(!out_dir.exists());
}

#[test]
fn vanishing_fourth_order_coefficient_needs_the_flag() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_dir = dir.path().join("schrodinger");
    let base = [
        "simulate",
        "--params",
        "0,1,0,0",
        "--dt",
        "1e-4",
        "--t-end",
        "1e-3",
        "--stride",
        "5",
    ];

    let mut args: Vec<&str> = base.to_vec();
    let path = out_dir.to_str().unwrap();
    args.extend(["--out", path]);
    let out = run(&args);
    assert_eq!(code(&out), 3, "a = 0 must be rejected by default");
    assert!(!out_dir.exists());

    let mut args: Vec<&str> = base.to_vec();
    args.extend(["--allow-a-zero", "--out", path]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let summary = read_json(&out_dir.join("summary.json"));
    assert_eq!(summary["status"], "pass");
    assert_eq!(summary["params"]["a"], 0.0);
}

#[test]
fn dispersion_run_matches_the_closed_form_speed() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_dir = dir.path().join("disp");
    let out = run(&[
        "dispersion",
        "--t-end",
        "5e-3",
        "--stride",
        "500",
        "--helix-mode",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let summary = read_json(&out_dir.join("summary.json"));
    assert_eq!(summary["status"], "pass");
    let rel = summary["metrics"]["rel_error"].as_f64().expect("rel_error");
    assert!(rel < 1e-3, "rel_error = {rel}");
    let residual = summary["metrics"]["ansatz_residual_n32"]
        .as_f64()
        .expect("residual");
    assert!(residual < 1e-8, "ansatz residual = {residual}");
}

#[test]
fn uniqueness_on_grassmann_uses_the_seeded_curve() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_dir = dir.path().join("gr");
    let out = run(&[
        "uniqueness",
        "--backend",
        "grassmann",
        "--n",
        "3",
        "--k",
        "1",
        "--grid",
        "32",
        "--dt",
        "2e-5",
        "--t-end",
        "1e-4",
        "--stride",
        "1",
        "--modes",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_text(&out));
    let loss = read_json(&out_dir.join("loss.json"));
    let rows = loss["rows"].as_array().expect("rows");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["mode"], 3);
}

#[test]
fn non_empty_output_directory_is_rejected() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_dir = dir.path().join("occupied");
    std::fs::create_dir(&out_dir).expect("create dir");
    std::fs::write(out_dir.join("precious.txt"), "keep me").expect("write file");
    let out = run(&[
        "verify",
        "--samples",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(
        stderr_text(&out).contains("already contains"),
        "stderr: {}",
        stderr_text(&out)
    );
    let kept = std::fs::read_to_string(out_dir.join("precious.txt")).expect("file survives");
    assert_eq!(kept, "keep me");
    assert_eq!(
        std::fs::read_dir(&out_dir).expect("read dir").count(),
        1,
        "nothing new may be written"
    );
}

#[test]
fn invalid_worker_cap_is_a_config_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_dir = dir.path().join("w");
    let out = bin()
        .args(uniqueness_args(&out_dir))
        .env("BISCHRO_THREADS", "zero")
        .output()
        .expect("binary runs");
    assert_eq!(code(&out), 3);
    assert!(!out_dir.exists());
}

#[test]
fn help_exits_zero_and_bad_flags_exit_three() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("bischro"));

    let out = run(&["simulate", "--no-such-flag"]);
    assert_eq!(code(&out), 3);

    let out = run(&["verify", "--backend", "klein-bottle"]);
    assert_eq!(code(&out), 3);
}
