use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn wallqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wallqa")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn smoke_config() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn gen_phantoms_prints_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"output_dir": "out", "cohort": {"n_participants": 3}}"#);
    let o = wallqa(&["gen-phantoms", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(manifest["participants"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("out/cohort/P002.vol").is_file());
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.json");
    let o = wallqa(&["gen-phantoms", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.json"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"cohort": {"n_participants": 1, "vesels": 2}}"#);
    let o = wallqa(&["gen-phantoms", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("vesels"), "{}", stderr(&o));
}

#[test]
fn correlate_without_records_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{}");
    let o = wallqa(&["correlate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("records.csv"), "{}", stderr(&o));
}

#[test]
fn smoke_pipeline_runs_and_report_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &smoke_config());
    let out = dir.path().join("run");
    let common = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "-q"];
    let start = Instant::now();
    for cmd in ["gen-phantoms", "train", "segment", "correlate", "sweep-noise", "sweep-offset", "report"] {
        let mut args = vec![cmd];
        args.extend(common);
        let o = wallqa(&args);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    assert!(start.elapsed() < Duration::from_secs(60), "smoke pipeline took {:?}", start.elapsed());

    let files = ["report/table.csv", "report/noise.svg", "report/offset.svg"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
    let mut args = vec!["report"];
    args.extend(common);
    assert!(wallqa(&args).status.success());
    for (f, before) in files.iter().zip(&first) {
        assert_eq!(&std::fs::read(out.join(f)).unwrap(), before, "{f} changed on rerun");
    }
}

#[test]
fn segment_without_weights_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"cohort": {"n_participants": 1}}"#);
    let path = cfg.to_str().unwrap();
    assert!(wallqa(&["gen-phantoms", "-q", "--config", path]).status.success());
    let o = wallqa(&["segment", "--config", path]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("weights.pqw"), "{}", stderr(&o));
}
