use std::path::Path;
use std::process::{Command, Output};

use diffurank_core::toy::ToyDenoiser;

fn diffurank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffurank")).args(args).output().unwrap()
}

fn init(dir: &Path) {
    let status = diffurank(&["init-toy", "--dir", dir.to_str().unwrap(), "--objects", "3", "--pairs", "6"]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    ToyDenoiser::untrained(16, 16, 1).save(&dir.join("model.json")).unwrap();
    let path = dir.join("config.toml");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("denoiser = \"model.json\"\n{text}")).unwrap();
}

#[test]
fn toy_run_then_stats_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path());
    let config = dir.path().join("config.toml");
    let run = diffurank(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));

    let csv = dir.path().join("out").join("captions.csv");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
    let stats = diffurank(&["stats", "--csv", csv.to_str().unwrap()]);
    assert!(stats.status.success());
    let value: serde_json::Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(value["records"], 3);

    let audit = diffurank(&["audit", "--csv", csv.to_str().unwrap()]);
    assert!(audit.status.success());
    assert_eq!(String::from_utf8_lossy(&audit.stdout).lines().count(), 3);
}

#[test]
fn invalid_config_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "top_p = 40\nnum_views = 28\n").unwrap();
    assert_eq!(diffurank(&["run", "--config", config.to_str().unwrap()]).status.code(), Some(3));
    std::fs::write(&config, "no_such_key = 1\n").unwrap();
    assert_eq!(diffurank(&["run", "--config", config.to_str().unwrap()]).status.code(), Some(3));
    let missing = dir.path().join("missing.toml");
    assert_eq!(diffurank(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn partial_failure_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path());
    let path = dir.path().join("config.toml");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("caption_failures = []", "caption_failures = [\"toy-0001\"]")).unwrap();
    let run = diffurank(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2), "{}", String::from_utf8_lossy(&run.stderr));
}
