use std::process::{Command, Output};

fn narrate(root: &std::path::Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_narrate"))
        .arg("--root")
        .arg(root)
        .args(args)
        .output()
        .expect("spawn narrate")
}

#[test]
fn missing_upstream_artifact_names_producer() {
    let root = tempfile::tempdir().unwrap();
    let out = narrate(root.path(), &["train-mem"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("missing-artifact: "), "{err}");
    assert!(err.trim_end().ends_with("run gen-data first"), "{err}");
}

#[test]
fn bad_arguments_exit_with_usage() {
    let root = tempfile::tempdir().unwrap();
    let out = narrate(root.path(), &["train-agent", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("usage: "));
    let out = narrate(root.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn bad_config_value_is_reported() {
    let root = tempfile::tempdir().unwrap();
    let out = narrate(root.path(), &["--set", "env.grid_size=4", "env-report"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("config: "));
}

#[test]
fn gen_data_writes_manifest_and_effective_config() {
    let root = tempfile::tempdir().unwrap();
    let out = narrate(
        root.path(),
        &[
            "--set",
            "env.grid_size=8",
            "--set",
            "env.episode_length=150",
            "gen-data",
            "--quota",
            "5",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = root.path().join("data");
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l.ends_with("  dataset.bin")));
    let config = std::fs::read_to_string(dir.join("config.txt")).unwrap();
    assert!(config.contains("data.quota = 5"));
    assert!(config.contains("env.grid_size = 8"));
}
