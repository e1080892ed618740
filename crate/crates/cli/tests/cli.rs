use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn stua(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stua"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn stua")
}

fn config_arg() -> String {
    smoke().to_string_lossy().into_owned()
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_arg();
    for step in ["synth", "train", "eval"] {
        let out = stua(dir.path(), &[step, "--config", &cfg]);
        assert!(
            out.status.success(),
            "{step}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in ["checkpoint.txt", "metrics.json", "predictions.csv"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let report = stua(dir.path(), &["report"]);
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("| picp |"));
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_arg();
    let a = stua(
        &dir.path().join("a"),
        &["run", "--config", &cfg, "--seed", "1"],
    );
    let b = stua(
        &dir.path().join("b"),
        &["run", "--config", &cfg, "--seed", "1"],
    );
    let c = stua(
        &dir.path().join("c"),
        &["run", "--config", &cfg, "--seed", "2"],
    );
    assert!(a.status.success() && b.status.success() && c.status.success());
    let read = |d: &str| std::fs::read(dir.path().join(d).join("metrics.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn indicators_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = stua(dir.path(), &["indicators", "--config", &config_arg()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("indicators.csv")).unwrap();
    assert!(text.starts_with("region_id,period,kind,value\n"));
    assert!(text.contains(",closeness,var_st,"));
}

#[test]
fn missing_key_exits_with_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(smoke())
        .unwrap()
        .replace("epochs = 3\n", "");
    let path = dir.path().join("broken.toml");
    std::fs::write(&path, text).unwrap();
    let out = stua(dir.path(), &["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
}

#[test]
fn ingest_needs_csv_source() {
    let dir = tempfile::tempdir().unwrap();
    let out = stua(dir.path(), &["ingest", "--config", &config_arg()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_without_checkpoint_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = stua(dir.path(), &["eval", "--config", &config_arg()]);
    assert_eq!(out.status.code(), Some(10));
}

#[test]
fn config_prints_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = stua(dir.path(), &["config"]);
    assert!(out.status.success());
    let shipped = std::fs::read_to_string(smoke().with_file_name("default.toml")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), shipped);
}
