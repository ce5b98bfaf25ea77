//! End-to-end tests of the `bca` binary: artifact layout, exit codes,
//! determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bca"))
        .args(args)
        .env_remove("BCA_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn complexity_preset_matches_reported_parameter_counts() {
    let out = bca(&[
        "complexity",
        "--preset",
        "llama2-7b-qv",
        "--p",
        "128,256,512,1024",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for expected in ["8.39M", "4.19M", "2.10M", "1.05M"] {
        assert!(text.contains(expected), "missing {expected} in:\n{text}");
    }
}

#[test]
fn complexity_custom_spec_and_json() {
    let out = bca(&[
        "complexity",
        "--d",
        "768",
        "--p",
        "768",
        "--layers",
        "12",
        "--matrices",
        "2",
        "--json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let payload: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(payload["schema_version"], 1);
    let entries = payload["report"]["entries"].as_array().unwrap();
    assert_eq!(entries[0]["trainable_params"], 18_432);
}

#[test]
fn complexity_divisibility_violation_exits_with_config_code() {
    let out = bca(&["complexity", "--d", "768", "--p", "100"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("100") && err.contains("768"), "{err}");
}

#[test]
fn complexity_unknown_method_is_rejected() {
    let out = bca(&["complexity", "--methods", "wavelets"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("wavelets"));
}

#[test]
fn simulate_smoke_writes_curves_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = bca(&[
        "simulate",
        "--n",
        "64",
        "--block-sizes",
        "64",
        "--iterations",
        "10",
        "--batch-size",
        "8",
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out_dir.join("dense.csv").exists());
    assert!(out_dir.join("p64.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["configurations"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(out_dir.join("p64.csv")).unwrap();
    assert!(csv.starts_with("# bca-sim-curve v1\niteration,mse,grad_mean_abs\n"));
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args_for = |sub: &Path| {
        vec![
            "simulate".to_string(),
            "--n".into(),
            "32".into(),
            "--block-sizes".into(),
            "32".into(),
            "--iterations".into(),
            "20".into(),
            "--batch-size".into(),
            "4".into(),
            "--seed".into(),
            "9".into(),
            "--out".into(),
            sub.to_str().unwrap().to_string(),
        ]
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for sub in [&a, &b] {
        let args: Vec<String> = args_for(sub);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = bca(&refs);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["dense.csv", "p32.csv", "summary.json"] {
        let bytes_a = std::fs::read(a.join(name)).unwrap();
        let bytes_b = std::fs::read(b.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between reruns");
    }
}

#[test]
fn simulate_malformed_config_fails_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[simulate]\nn = \"not a number\"\n").unwrap();
    let out_dir = dir.path().join("run");
    let out = bca(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n"), "{}", stderr(&out));
    assert!(!out_dir.exists(), "no partial outputs on config failure");
}

#[test]
fn simulate_unknown_config_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[simulate]\nnn_typo = 3\n").unwrap();
    let out = bca(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nn_typo"), "{}", stderr(&out));
}

#[test]
fn config_file_drives_simulate_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    let out_dir = dir.path().join("artifacts");
    std::fs::write(
        &config,
        format!(
            "seed = 5\nout = \"{}\"\n\n[simulate]\nn = 32\nblock_sizes = [16]\niterations = 40\nbatch_size = 4\ninclude_dense = false\n",
            out_dir.display()
        ),
    )
    .unwrap();
    let out = bca(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--iterations",
        "5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out_dir.join("p16.csv").exists());
    assert!(!out_dir.join("dense.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["iterations"], 5, "flag overrides the file value");
    assert_eq!(summary["seed"], 5, "global seed comes from the file");
}

#[test]
fn env_var_sets_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_bca"))
        .args([
            "simulate",
            "--n",
            "16",
            "--block-sizes",
            "16",
            "--no-dense",
            "--iterations",
            "3",
            "--batch-size",
            "2",
        ])
        .env("BCA_OUT", &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out_dir.join("p16.csv").exists());
}

#[test]
fn demo_divergence_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("demo");
    let out = bca(&[
        "demo-divergence",
        "--n",
        "32",
        "--p",
        "32",
        "--lr",
        "2.0",
        "--iterations",
        "500",
        "--batch-size",
        "8",
        "--seed",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("heuristic factor: lr / p = 2 / 32"), "{text}");
    assert!(out_dir.join("heuristic_off.csv").exists());
    assert!(out_dir.join("heuristic_on.csv").exists());
    let verdict: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("verdict.json")).unwrap())
            .unwrap();
    assert_eq!(verdict["schema_version"], 1);
    assert!(verdict["diverged_without"].is_boolean());
    assert!(verdict["converged_with"].is_boolean());
}

#[test]
fn train_toy_smoke_with_merge_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("toy");
    let out = bca(&[
        "train-toy",
        "--n",
        "32",
        "--p",
        "8",
        "--dataset-size",
        "64",
        "--iterations",
        "50",
        "--batch-size",
        "8",
        "--merge",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("max relative deviation"), "{text}");
    for name in ["loss.csv", "report.json", "adapter.ckpt", "adapter.ckpt.meta.json", "merged.bin"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert!(report["merge_max_rel_deviation"].as_f64().unwrap() < 1e-10);

    // resume from the saved checkpoint
    let ckpt = out_dir.join("adapter.ckpt");
    let resume_dir = dir.path().join("resumed");
    let out = bca(&[
        "train-toy",
        "--n",
        "32",
        "--p",
        "8",
        "--dataset-size",
        "64",
        "--iterations",
        "10",
        "--batch-size",
        "8",
        "--resume",
        ckpt.to_str().unwrap(),
        "--out",
        resume_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(resume_dir.join("report.json")).unwrap())
            .unwrap();
    // the resumed run continues the step counter
    assert_eq!(report["steps_run"], 10);
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(resume_dir.join("adapter.ckpt.meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["step"], 60);
}

#[test]
fn train_toy_resume_with_wrong_shape_is_a_compatibility_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("toy");
    let out = bca(&[
        "train-toy",
        "--n",
        "32",
        "--p",
        "8",
        "--dataset-size",
        "32",
        "--iterations",
        "5",
        "--batch-size",
        "4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ckpt = out_dir.join("adapter.ckpt");
    let out = bca(&[
        "train-toy",
        "--n",
        "32",
        "--p",
        "16",
        "--dataset-size",
        "32",
        "--iterations",
        "5",
        "--batch-size",
        "4",
        "--resume",
        ckpt.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("block size 8") && err.contains("block size 16"), "{err}");
}

#[test]
fn corrupt_checkpoint_exits_with_integrity_code() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("toy");
    let out = bca(&[
        "train-toy",
        "--n",
        "16",
        "--p",
        "4",
        "--dataset-size",
        "16",
        "--iterations",
        "3",
        "--batch-size",
        "4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ckpt = out_dir.join("adapter.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &bytes[..bytes.len() - 7]).unwrap();
    let out = bca(&[
        "train-toy",
        "--n",
        "16",
        "--p",
        "4",
        "--dataset-size",
        "16",
        "--iterations",
        "3",
        "--batch-size",
        "4",
        "--resume",
        ckpt.to_str().unwrap(),
        "--out",
        dir.path().join("y").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("truncated"), "{}", stderr(&out));
}
