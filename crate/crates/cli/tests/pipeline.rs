//! End-to-end pipeline tests against the built binary.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn run_dsre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsre"))
        .args(args)
        .current_dir(workspace_root())
        .output()
        .expect("binary runs")
}

fn control_config() -> String {
    workspace_root()
        .join("configs/control.json")
        .to_string_lossy()
        .into_owned()
}

#[test]
fn full_control_pipeline_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let result = run_dsre(&["full", "--config", &control_config(), "--output-dir", &out]);
    assert!(
        result.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        result.status.code(),
        String::from_utf8_lossy(&result.stdout),
        String::from_utf8_lossy(&result.stderr)
    );

    // the control covariance is twice the identity
    let summary: serde_json::Value = serde_json::from_reader(
        std::fs::File::open(dir.path().join("corrector_summary.json")).unwrap(),
    )
    .unwrap();
    let sigma2 = &summary["sigma2"]["Matrix"];
    for i in 0..2 {
        for j in 0..2 {
            let expected = if i == j { 2.0 } else { 0.0 };
            let got = sigma2[i][j].as_f64().unwrap();
            assert!(
                (got - expected).abs() < 1e-12,
                "sigma2[{i}][{j}] = {got}"
            );
        }
    }

    // every verdict in the manifest passed
    let manifest: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let verdicts = manifest["verdicts"].as_array().unwrap();
    assert!(!verdicts.is_empty());
    for v in verdicts {
        assert_eq!(v["pass"], true, "failed verdict: {v}");
    }
    assert!(manifest["error"].is_null());
}

#[test]
fn full_benchmark_pipeline_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let config = workspace_root()
        .join("configs/benchmark_seed7.json")
        .to_string_lossy()
        .into_owned();
    let result = run_dsre(&["full", "--config", &config, "--output-dir", &out]);
    assert!(
        result.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        result.status.code(),
        String::from_utf8_lossy(&result.stdout),
        String::from_utf8_lossy(&result.stderr)
    );
    let manifest: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    for v in manifest["verdicts"].as_array().unwrap() {
        assert_eq!(v["pass"], true, "failed verdict: {v}");
    }
}

#[test]
fn verify_clt_resolves_its_dependencies() {
    // a bare verify-clt in an empty directory generates the environment and
    // solves the corrector on its own
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let result = run_dsre(&[
        "verify-clt",
        "--config",
        &control_config(),
        "--output-dir",
        &out,
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert!(dir.path().join("environment.f64").exists());
    assert!(dir.path().join("corrector_summary.json").exists());
    assert!(dir.path().join("clt_report.json").exists());
}

#[test]
fn verify_clt_rejects_insufficient_walks() {
    let dir = tempfile::tempdir().unwrap();
    // clone the control config with far too few walks
    let mut config: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(workspace_root().join("configs/control.json")).unwrap(),
    )
    .unwrap();
    config["simulation"]["n_walks"] = serde_json::json!(10);
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();

    let out = dir.path().join("out").to_string_lossy().into_owned();
    let result = run_dsre(&[
        "verify-clt",
        "--config",
        config_path.to_str().unwrap(),
        "--output-dir",
        &out,
    ]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("below the minimum"), "stderr: {stderr}");
}

#[test]
fn schema_violation_names_the_json_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut config: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(workspace_root().join("configs/control.json")).unwrap(),
    )
    .unwrap();
    config["environment"]["h"] = serde_json::json!({"kind": "iid_uniform", "low": -1.0, "hi": 1.0});
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();

    let result = run_dsre(&["gen-env", "--config", config_path.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(
        stderr.contains("environment.h"),
        "error should name the path, got: {stderr}"
    );
}

#[test]
fn reruns_are_bit_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = dir.path().to_string_lossy().into_owned();
        let result = run_dsre(&["full", "--config", &control_config(), "--output-dir", &out]);
        assert!(result.status.success());
    }
    // all field dumps and CSV series agree byte for byte
    for name in [
        "environment.f64",
        "environment.json",
        "corrector.f64",
        "corrector.json",
        "q_final.f64",
        "q_final.csv",
        "samples.csv",
        "nash_series.csv",
        "corrector_summary.json",
    ] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn manifest_lists_every_output_file_with_matching_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let result = run_dsre(&["full", "--config", &control_config(), "--output-dir", &out]);
    assert!(result.status.success());

    let manifest: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let listed: HashMap<String, String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["path"].as_str().unwrap().to_string(),
                f["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect();

    let mut on_disk = Vec::new();
    collect_files(dir.path(), dir.path(), &mut on_disk);
    assert!(!on_disk.is_empty());
    for rel in on_disk {
        if rel == "manifest.json" {
            continue;
        }
        let hash = listed.get(&rel).unwrap_or_else(|| panic!("{rel} not in manifest"));
        let bytes = std::fs::read(dir.path().join(&rel)).unwrap();
        assert_eq!(hash, &dsre_core::io::sha256_hex(&bytes), "hash mismatch for {rel}");
    }
}

#[test]
fn later_stages_reuse_stored_artifacts() {
    // solve-corrector writes the environment and corrector; a subsequent
    // verify-clt in the same directory loads both instead of recomputing
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let result = run_dsre(&[
        "solve-corrector",
        "--config",
        &control_config(),
        "--output-dir",
        &out,
    ]);
    assert!(result.status.success());
    let written = std::fs::metadata(dir.path().join("corrector.f64"))
        .unwrap()
        .modified()
        .unwrap();

    let result = run_dsre(&[
        "verify-clt",
        "--config",
        &control_config(),
        "--output-dir",
        &out,
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    // the stored corrector was not rewritten
    let after = std::fs::metadata(dir.path().join("corrector.f64"))
        .unwrap()
        .modified()
        .unwrap();
    assert_eq!(written, after);
    assert!(dir.path().join("clt_report.json").exists());
}

#[test]
fn stale_environment_is_rejected_across_stages() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    // generate with one seed, then ask for a corrector under another seed
    let result = run_dsre(&[
        "gen-env",
        "--config",
        &control_config(),
        "--output-dir",
        &out,
        "--seed",
        "1",
    ]);
    assert!(result.status.success());
    let result = run_dsre(&[
        "solve-corrector",
        "--config",
        &control_config(),
        "--output-dir",
        &out,
        "--seed",
        "2",
    ]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("stale environment"), "stderr: {stderr}");
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            out.push(path.strip_prefix(root).unwrap().to_string_lossy().into_owned());
        }
    }
}
