//! End-to-end tests of the `advgrid` binary: exit codes, idempotent reruns,
//! and the files each subcommand leaves behind.
//!
//! Every test runs at a deliberately tiny scale (one model, one variant,
//! ten images per class, a single FGSM config) so the whole suite stays
//! within a few seconds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn advgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advgrid"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process not killed by signal")
}

/// Tiny single-model plan pointing its output at `dir/out`.
fn write_tiny_config(dir: &Path) -> PathBuf {
    let out = dir.join("out");
    let text = format!(
        r#"
[corpus]
seed = 7
n_per_class = 10

[models]
include = ["brainnet"]

[attacks]
fgsm_epsilons = [0.03]
pgd = []

[plan]
variants = ["shrunk-noaug"]

[output]
dir = "{}"
"#,
        out.display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).expect("config written");
    path
}

fn read_bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn help_exits_zero_and_prints_usage() {
    let out = advgrid(&["--help"]);
    assert_eq!(exit_code(&out), 0);
    assert!(stdout_of(&out).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = advgrid(&["--no-such-flag"]);
    assert_eq!(exit_code(&out), 1);
    assert!(!stderr_of(&out).is_empty());
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = advgrid(&["--config", "/no/such/file.toml", "gen-data"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("file.toml"));
}

#[test]
fn unknown_config_key_is_rejected_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[corpus]\nseeed = 3\n").unwrap();
    let out = advgrid(&["--config", path.to_str().unwrap(), "gen-data"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("seeed"));
}

#[test]
fn unknown_model_name_lists_the_registry() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out = advgrid(&[
        "--config",
        config.to_str().unwrap(),
        "train",
        "--models",
        "nosuchnet",
    ]);
    assert_eq!(exit_code(&out), 1);
    let err = stderr_of(&out);
    assert!(err.contains("nosuchnet"));
    assert!(err.contains("brainnet"), "error should list registry names: {err}");
}

#[test]
fn gen_data_writes_a_corpus_and_skips_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();

    let out = advgrid(&["--config", cfg, "gen-data"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let manifest = dir.path().join("out/data/manifest.json");
    assert!(manifest.exists());
    let first = read_bytes(&manifest);

    let again = advgrid(&["--config", cfg, "gen-data"]);
    assert_eq!(exit_code(&again), 0);
    assert!(stderr_of(&again).contains("already present"));
    assert_eq!(read_bytes(&manifest), first);
}

#[test]
fn train_writes_a_checkpoint_and_skips_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();

    let out = advgrid(&["--config", cfg, "train"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let ckpt = dir.path().join("out/checkpoints/brainnet_shrunk-noaug.ckpt");
    let csv = dir.path().join("out/checkpoints/brainnet_shrunk-noaug_train.csv");
    assert!(ckpt.exists());
    assert!(csv.exists());
    let first = read_bytes(&ckpt);

    let again = advgrid(&["--config", cfg, "train"]);
    assert_eq!(exit_code(&again), 0);
    assert!(stderr_of(&again).contains("skipping"));
    assert_eq!(read_bytes(&ckpt), first, "rerun must not rewrite the checkpoint");
}

#[test]
fn attack_writes_a_set_and_skips_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();

    let out = advgrid(&["--config", cfg, "attack"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let set = dir
        .path()
        .join("out/attacks/brainnet_shrunk-noaug_fgsm_eps0.03.advset");
    assert!(set.exists(), "missing {}", set.display());
    let first = read_bytes(&set);

    let again = advgrid(&["--config", cfg, "attack"]);
    assert_eq!(exit_code(&again), 0);
    assert!(stderr_of(&again).contains("skipping"));
    assert_eq!(read_bytes(&set), first);
}

#[test]
fn matrix_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();

    let out = advgrid(&["--config", cfg, "matrix"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let matrix = dir.path().join("out/matrix.csv");
    let manifest = dir.path().join("out/run-manifest.json");
    assert!(matrix.exists());
    assert!(manifest.exists());
    let first_matrix = read_bytes(&matrix);
    let first_manifest = read_bytes(&manifest);
    let text = String::from_utf8(first_matrix.clone()).unwrap();
    assert!(text.starts_with("variant,source,target,attack"));
    assert!(text.contains("shrunk-noaug,brainnet,brainnet,fgsm"));

    let again = advgrid(&["--config", cfg, "matrix"]);
    assert_eq!(exit_code(&again), 0);
    assert_eq!(read_bytes(&matrix), first_matrix);
    assert_eq!(read_bytes(&manifest), first_manifest);
}

#[test]
fn report_renders_charts_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();

    let out = advgrid(&["--config", cfg, "matrix"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let out = advgrid(&["--config", cfg, "report"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("per-target accuracy"));

    let report = dir.path().join("out/report");
    assert!(report.join("summary.txt").exists());
    assert!(report.join("report-manifest.json").exists());
    assert!(report.join("chart_shrunk-noaug_fgsm_eps0.03.svg").exists());
}

#[test]
fn report_rejects_a_corrupt_matrix_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();

    let out_dir = dir.path().join("out");
    fs::create_dir_all(&out_dir).unwrap();
    fs::write(
        out_dir.join("matrix.csv"),
        "variant,source,target,attack,epsilon,alpha,iterations,seed,clean_acc,adv_acc,drop\n\
         shrunk-noaug,brainnet,brainnet,fgsm,0.030000,,,1,1.5,0.0,1.5\n",
    )
    .unwrap();

    let out = advgrid(&["--config", cfg, "report"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("line 2"), "stderr: {}", stderr_of(&out));
}

#[test]
fn seed_override_changes_the_corpus_hash() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();

    let a = advgrid(&["--config", cfg, "gen-data"]);
    assert_eq!(exit_code(&a), 0);
    let manifest = dir.path().join("out/data/manifest.json");
    let first = read_bytes(&manifest);

    let b = advgrid(&["--config", cfg, "--seed", "8", "gen-data", "--force"]);
    assert_eq!(exit_code(&b), 0, "stderr: {}", stderr_of(&b));
    assert_ne!(read_bytes(&manifest), first, "new seed must change the corpus");
}
