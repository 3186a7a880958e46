//! End-to-end checks of the `detpomdp` binary: exit codes, artifact
//! reproducibility, and checkpoint/environment binding.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY_CONFIG: &str = r#"
schema_version = 1

[environment]
n_components = 2
horizon_years = 5
gamma = 0.95
r_fail = -10000.0
cost_model = { kind = "individual", r_ins = -1.0, r_rep = -20.0 }

[discretization]
n_crack = 5
n_rate = 6
mc_samples = 10000
pod_mean = 8.0
build_seed = 7

[system]
kind = "k_out_of_n"
k = 2

[training]
episodes = 60
actor_hidden = [8]
critic_hidden = [8]
warmup_transitions = 50
do_nothing_priming = 10

[heuristics]
stage1_realizations = 20
shortlist = 2
stage2_realizations = 40
max_delta = 4
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_detpomdp"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, TOY_CONFIG).unwrap();
    path
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn evaluate_with_zero_episodes_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .args(["--seed", "1", "--episodes", "0", "--rule", "2,2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("episodes"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = bin()
        .args(["evaluate", "--config", "/nonexistent/experiment.toml"])
        .args(["--seed", "1", "--episodes", "1", "--rule", "2,2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn model_build_is_reproducible_for_identical_configs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let mut hashes = Vec::new();
    for name in ["a.model.json", "b.model.json"] {
        let out_path = dir.path().join(name);
        let out = bin()
            .args(["model", "build", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out_path)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
        let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
        let hash = stdout
            .lines()
            .find_map(|l| l.split("hash ").nth(1))
            .expect("model build prints a content hash")
            .to_string();
        hashes.push(hash);
        assert!(out_path.exists());
        assert!(dir.path().join(format!("{name}.manifest.json")).exists());
    }
    assert_eq!(hashes[0], hashes[1], "same config must give the same model hash");
}

#[test]
fn checkpoint_refuses_mismatched_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let ckpt = dir.path().join("policy.ckpt");
    let curves = dir.path().join("curves.csv");
    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--seed", "3", "--out"])
        .arg(&ckpt)
        .arg("--curves")
        .arg(&curves)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    // evaluating against the same config works
    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .args(["--seed", "1", "--episodes", "3", "--checkpoint"])
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    // a config with a different horizon must be rejected as a config error
    let altered = TOY_CONFIG.replace("horizon_years = 5", "horizon_years = 6");
    let other = dir.path().join("other.toml");
    fs::write(&other, altered).unwrap();
    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&other)
        .args(["--seed", "1", "--episodes", "3", "--checkpoint"])
        .arg(&ckpt)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn compare_prints_cost_decomposition_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let ckpt = dir.path().join("policy.ckpt");
    let curves = dir.path().join("curves.csv");
    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--seed", "3", "--out"])
        .arg(&ckpt)
        .arg("--curves")
        .arg(&curves)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let out = bin()
        .args(["compare", "--config"])
        .arg(&config)
        .args(["--seed", "1", "--episodes", "5", "--rule", "2,2", "--checkpoint"])
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    for needle in ["campaign", "inspection", "repair", "risk/failure", "total", "stderr"] {
        assert!(stdout.contains(needle), "missing {needle:?} in:\n{stdout}");
    }
}

#[test]
fn heuristics_search_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let csv = dir.path().join("search.csv");
    let out = bin()
        .args(["heuristics", "search", "--config"])
        .arg(&config)
        .args(["--seed", "5", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("delta_ins,n_ins,stage,mean_cost,stderr,n_episodes"));
    assert!(text.lines().count() > 1);
    assert!(dir.path().join("search.csv.manifest.json").exists());
}
