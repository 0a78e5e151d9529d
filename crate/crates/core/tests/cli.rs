use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use leafnet::data::{generate_synthetic, write_image_folder, SyntheticSpec};

fn leafnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leafnet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LEAFNET_DATA_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn leafnet")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_data_root_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = leafnet(&["prepare", "--data-root", "nope", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
    let o = leafnet(&["prepare", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"epochz": 3, "batchSize": "big", "colour": true, "learningRate": -1}"#,
    )
    .unwrap();
    let o = leafnet(&["--config", "c.json", "prepare"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for key in ["epochz", "batchSize", "colour"] {
        assert!(err.contains(key), "{key} missing from: {err}");
    }
}

#[test]
fn env_root_used_when_flag_and_config_absent() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&SyntheticSpec::new(2, 3, 8, 1)).unwrap();
    write_image_folder(&ds, &dir.path().join("data")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_leafnet"))
        .args(["prepare", "--out", "out"])
        .current_dir(dir.path())
        .env("LEAFNET_DATA_ROOT", dir.path().join("data"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/split_manifest.csv").is_file());
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let ds = generate_synthetic(&SyntheticSpec::new(3, 8, 48, 7)).unwrap();
    write_image_folder(&ds, &root.join("data")).unwrap();
    fs::write(
        root.join("run.json.in"),
        r#"{"dataRoot": "data", "architecture": "exp2-bncnn", "inputSize": [64, 64],
            "epochs": 2, "batchSize": 8, "splitRatios": {"train": 0.5, "val": 0.25, "test": 0.25}}"#,
    )
    .unwrap();

    let ok = |args: &[&str]| {
        let o = leafnet(args, root);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    ok(&["--config", "run.json.in", "--seed", "3", "--out", "out", "prepare"]);
    let first = fs::read(root.join("out/split_manifest.csv")).unwrap();
    ok(&["--config", "run.json.in", "--seed", "3", "--out", "out", "prepare"]);
    assert_eq!(first, fs::read(root.join("out/split_manifest.csv")).unwrap());
    let summary = fs::read_to_string(root.join("out/class_summary.csv")).unwrap();
    assert!(summary.starts_with("classIndex,className,total,train,val,test\n0,class_00,8,4,2,2\n"));

    ok(&["--config", "run.json.in", "--seed", "3", "--out", "out", "train"]);
    let history = fs::read_to_string(root.join("out/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,loss,accuracy,val_loss,val_accuracy\n"));

    ok(&["--config", "run.json.in", "--out", "out", "evaluate"]);
    for f in ["report.txt", "report.csv", "confusion.csv", "roc_auc.csv", "roc_00_class_00.csv"] {
        assert!(root.join("out").join(f).is_file(), "{f}");
    }

    let img = root.join("data/class_01/img_00000.png");
    let stdout = ok(&["--out", "out", "predict", img.to_str().unwrap()]);
    assert!(stdout.contains("class_0"));

    ok(&["--config", "run.json.in", "--out", "out", "report", "--plot"]);
    for f in ["accuracy_curve.csv", "loss_curve.csv", "accuracy.png", "loss.png"] {
        assert!(root.join("out").join(f).is_file(), "{f}");
    }

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("out/run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "report");
    assert_eq!(run["config"]["epochs"], 2);
}

#[test]
fn run_json_reproduces_training() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let ds = generate_synthetic(&SyntheticSpec::new(2, 4, 32, 9)).unwrap();
    write_image_folder(&ds, &root.join("data")).unwrap();
    let train = |out: &str, config: Option<&str>| {
        let mut args = vec!["--out", out, "--seed", "11"];
        if let Some(c) = config {
            args.extend(["--config", c]);
        }
        args.extend(["train", "--data-root", "data", "--architecture", "exp4-proposed", "--epochs", "1", "--batch-size", "4"]);
        let o = leafnet(&args, root);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    fs::write(root.join("c.json"), r#"{"inputSize": [64, 64]}"#).unwrap();
    train("a", Some("c.json"));
    let o = leafnet(&["--config", "a/run.json", "--out", "b", "train"], root);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(root.join("a/checkpoint.lfnt")).unwrap(),
        fs::read(root.join("b/checkpoint.lfnt")).unwrap()
    );
}
