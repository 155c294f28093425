//! End-to-end CLI tests through the real binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tailfuse"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    format!(
        r#"
schema_version = 1
seed = 11
batch_size = 8
output_dir = "{}"

[data]
n_samples = 120
target_lo = -18.0
target_hi = 1.0
tail_exponent = 5.0
modality_dims = [4, 3]
noise_scales = [0.5, 0.2]
bin_width = 1.0
many_min = 12
few_max = 3
train_fraction = 0.75

[arch]
encoder_hidden = [8]
embed_dim = 4
fusion_hidden = [8]

[stage1]
epochs = 1
m0 = 0.4
beta = 0.0005
t_n = 100
lambda_supcon = 0.1
tau = 0.07
w_smape = 1.0
w_r2 = 1.0
lr = 1e-3

[stage2]
epochs = 1
gamma_base = 1.0
gamma_min = 0.5
gamma_max = 15.0
eps_probe = 0.05
probe_steps = 1
window_len = 20
lr = 1e-3
"#,
        dir.display()
    )
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, tiny_config(dir.path())).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    for args in [
        vec!["gen-data", "--config", cfg],
        vec!["pretrain", "--config", cfg],
        vec!["train-joint", "--config", cfg],
        vec!["train-joint", "--config", cfg, "--baseline"],
    ] {
        let out = run(&args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in [
        "train.csv",
        "test.csv",
        "summary.json",
        "stage1_m0.json",
        "stage1_m1.json",
        "joint.json",
        "baseline.json",
        "joint_steps.jsonl",
    ] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }

    let out = run(&["eval", "--config", cfg]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["schema_version"], 1);
    assert!(parsed["report"]["overall"]["mse"].is_number());
    // Baseline checkpoint is present, so the comparison is emitted.
    assert!(parsed["mse_ratio"].is_number());
    assert!(dir.path().join("eval.json").exists());

    // The config snapshot preserves the input file byte for byte.
    let snapshot = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert_eq!(snapshot, tiny_config(dir.path()));
}

#[test]
fn theory_passes_and_reports_the_divergence_cases() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["theory", "--output-dir", dir.path().to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("theory.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["all_passed"], true);
    let checks = parsed["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 10);
    let diverging = checks
        .iter()
        .find(|c| c["name"] == "divergence_diverging")
        .unwrap();
    assert!(diverging["detail"].as_str().unwrap().contains("Diverging"));
    let oscillating = checks
        .iter()
        .find(|c| c["name"] == "divergence_oscillating")
        .unwrap();
    assert!(oscillating["detail"]
        .as_str()
        .unwrap()
        .contains("Oscillating"));
}

#[test]
fn probe_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["probe", "--output-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("probe.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(parsed["pearson_sgm"].as_f64().unwrap() > 0.0);
    assert_eq!(parsed["sgm"]["u_trace"].as_array().unwrap().len(), 401);
}

#[test]
fn validation_errors_exit_one() {
    // Unparseable config.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "not = actually\n[valid").unwrap();
    let out = run(&["gen-data", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    // Missing dataset for pretrain.
    let out = run(&["pretrain", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    // Unknown flag is a usage (validation) error, not a check failure.
    let out = run(&["gen-data", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_override_changes_the_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = a.path().join("run.toml");
    std::fs::write(&cfg_a, tiny_config(a.path())).unwrap();
    let out = run(&["gen-data", "--config", cfg_a.to_str().unwrap()]);
    assert!(out.status.success());

    let cfg_b = b.path().join("run.toml");
    std::fs::write(&cfg_b, tiny_config(b.path())).unwrap();
    let out = run(&[
        "gen-data",
        "--config",
        cfg_b.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert!(out.status.success());

    let train_a = std::fs::read_to_string(a.path().join("train.csv")).unwrap();
    let train_b = std::fs::read_to_string(b.path().join("train.csv")).unwrap();
    assert_ne!(train_a, train_b);
}
