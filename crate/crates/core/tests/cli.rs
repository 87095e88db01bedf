use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ghr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghr")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"{
    "preset": "small_oor",
    "data": {"train": 12, "val": 4, "test": 4},
    "ghr": {"m": 8, "r": 2, "t_high": 2, "t_low": 2},
    "flat": {"m": 8, "depth": 3},
    "train": {"epochs": 2, "batch_size": 4},
    "variants": ["recurrent_gine"],
    "seeds": [0]
}"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.json"), SMALL).unwrap();
    ok(&ghr(&["gen", "--config", "run.json", "--out", "data"], dir.path()));
    dir
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn gen_writes_splits_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.json"), r#"{"data": {"train": 100, "val": 20, "test": 20}}"#).unwrap();
    let out = ok(&ghr(&["gen", "--config", "run.json", "--out", "a"], dir.path()));
    assert!(out.contains("capped at 5"));
    ok(&ghr(&["gen", "--config", "run.json", "--out", "b"], dir.path()));
    let d = dir.path();
    assert_eq!(lines(&d.join("a/train.jsonl")) + lines(&d.join("a/val.jsonl")) + lines(&d.join("a/test.jsonl")), 140);
    assert!(fs::read_to_string(d.join("a/manifest.json")).unwrap().contains("capped at 5"));
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"ghr": {"bogus": 1}}"#).unwrap();
    assert_eq!(ghr(&["gen", "--config", "bad.json"], dir.path()).status.code(), Some(1));
    fs::write(dir.path().join("blocker"), "").unwrap();
    fs::write(dir.path().join("tiny.json"), r#"{"data": {"train": 1, "val": 1, "test": 1}}"#).unwrap();
    let o = ghr(&["gen", "--config", "tiny.json", "--out", "blocker/sub"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(ghr(&["eval", "--checkpoint", "missing.bin"], dir.path()).status.code(), Some(2));
}

#[test]
fn train_eval_round_trip() {
    let dir = setup();
    let d = dir.path();
    let out = ok(&ghr(&["train", "--config", "run.json", "--dataset", "data", "--out", "run"], d));
    assert!(out.contains("final validation MAE"));
    let csv = fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,train_loss,val_mae"));
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(lines(&d.join("run/train_log.jsonl")), 2);

    // Evaluating the best checkpoint on the validation split reproduces the
    // logged value of that epoch.
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run/train_summary.json")).unwrap()).unwrap();
    let best = summary["best_val_mae"].as_f64().unwrap();
    ok(&ghr(&["eval", "--config", "run.json", "--dataset", "data", "--checkpoint", "run/checkpoint.bin", "--split", "val", "--out", "rep"], d));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("rep/eval_val.json")).unwrap()).unwrap();
    assert!((rep["test_mae"].as_f64().unwrap() - best).abs() <= 1e-9);

    // Raising t_low changes the recorded iteration counts only.
    ok(&ghr(&["eval", "--dataset", "data", "--checkpoint", "run/checkpoint.bin", "--out", "r2"], d));
    ok(&ghr(&["eval", "--dataset", "data", "--checkpoint", "run/checkpoint.bin", "--out", "r3", "--t-low", "4"], d));
    let a: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r2/eval_test.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r3/eval_test.json")).unwrap()).unwrap();
    assert_eq!(a["iterations"], serde_json::json!({"r": 2, "t_high": 2, "t_low": 2}));
    assert_eq!(b["iterations"], serde_json::json!({"r": 2, "t_high": 2, "t_low": 4}));
    assert_eq!(a["model_variant"], b["model_variant"]);
    assert_eq!(a["nodes"], b["nodes"]);
    let head = fs::read_to_string(d.join("r2/eval_test.csv")).unwrap();
    assert_eq!(head.lines().next(), Some("distance,mae,count"));
}

#[test]
fn zero_learning_rate_checkpoint_equals_initialisation() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("lr0.json"), SMALL.replace(r#""epochs": 2"#, r#""epochs": 1, "learning_rate": 0.0"#)).unwrap();
    ok(&ghr(&["train", "--config", "lr0.json", "--dataset", "data", "--out", "run"], d));
    let net = ghr::network::Network::from_checkpoint(&fs::read(d.join("run/checkpoint.bin")).unwrap()).unwrap();
    let cfg = ghr::config::RunConfig::from_json(SMALL).unwrap();
    let init = ghr::network::Network::new(cfg.network("ghr_gated_gine").unwrap(), 0).unwrap();
    assert!(net.store().values_equal(init.store()));
}

#[test]
fn pool_stats_rows_contract() {
    let dir = setup();
    let d = dir.path();
    ok(&ghr(&["pool-stats", "--dataset", "data", "--split", "train", "--out", "ps"], d));
    let csv = fs::read_to_string(d.join("ps/pool_stats.csv")).unwrap();
    let mut it = csv.lines();
    assert_eq!(it.next(), Some("graph_id,n_low,n_high,diam_low,diam_high,ratio"));
    let mut rows = 0;
    for line in it {
        let f: Vec<&str> = line.split(',').collect();
        let (lo, hi): (usize, usize) = (f[3].parse().unwrap(), f[4].parse().unwrap());
        assert!(hi <= lo);
        rows += 1;
    }
    assert_eq!(rows, 12);
    assert!(d.join("ps/pool_stats_binned.csv").exists());
}

#[test]
fn ablate_single_variant() {
    let dir = setup();
    let d = dir.path();
    ok(&ghr(&["ablate", "--config", "run.json", "--dataset", "data", "--out", "abl"], d));
    let s = fs::read_to_string(d.join("abl/ablation_summary.csv")).unwrap();
    let rows: Vec<&str> = s.lines().collect();
    assert_eq!(rows[0], "model_variant,runs,test_mae,id_mae,oor_mae,max_pred");
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("recurrent_gine,1,"));
    let runs = fs::read_to_string(d.join("abl/ablation_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 2);
}

#[test]
fn selfcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&ghr(&["selfcheck"], dir.path()));
    assert!(!out.contains("FAIL"));
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 7);
}
