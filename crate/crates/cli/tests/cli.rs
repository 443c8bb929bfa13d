use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csad::metrics::EvalReport;

fn csad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csad"))
        .args(args)
        .output()
        .expect("spawn csad")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn digits_config(dir: &Path, name: &str, sigma2: f64, side: usize, variant: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"{{
  "seed": 4,
  "data": {{"kind": "colored_digits", "sigma2": {sigma2}, "n_train": 96, "n_test": 48, "image_side": {side}}},
  "model": {{"hidden": [16], "feature": 8}},
  "train": {{"variant": "{variant}", "K": 2, "batch_size": 16, "epochs_pretrain_target": 1,
            "epochs_pretrain_bias": 1, "epochs_pretrain_mi": 1, "epochs_main": 1}},
  "outputs": "{name}"{extra}
}}"#
    );
    let p = dir.join(format!("{name}.json"));
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_writes_splits_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = digits_config(dir.path(), "run", 0.02, 8, "baseline", "");
    let o = csad(&["gen-data", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("train: n=96 x_dim=192"), "{out}");
    assert!(out.contains("test: n=48"), "{out}");
    assert!(out.contains("bias_entropy=["), "{out}");

    for split in ["train", "test"] {
        assert!(dir.path().join("run").join(split).join("data.bin").is_file());
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/train/meta.json")).unwrap()).unwrap();
    let text = meta.to_string();
    assert!(text.contains("\"sigma2\":0.02"), "{text}");
    assert!(text.contains("\"n_train\":96"), "{text}");
    assert_eq!(meta["n"], 96);
}

#[test]
fn same_seed_gives_identical_data() {
    let dir = tempfile::tempdir().unwrap();
    let a = digits_config(dir.path(), "a", 0.02, 8, "baseline", "");
    let b = digits_config(dir.path(), "b", 0.02, 8, "baseline", "");
    assert_eq!(code(&csad(&["gen-data", "--config", s(&a)])), 0);
    assert_eq!(code(&csad(&["gen-data", "--config", s(&b)])), 0);
    for split in ["train", "test"] {
        let x = fs::read(dir.path().join("a").join(split).join("data.bin")).unwrap();
        let y = fs::read(dir.path().join("b").join(split).join("data.bin")).unwrap();
        assert_eq!(x, y, "{split}");
    }
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let zero = digits_config(dir.path(), "z", 0.0, 8, "baseline", "");
    let o = csad(&["gen-data", "--config", s(&zero)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("sigma2"), "{}", stderr(&o));

    let unknown = digits_config(dir.path(), "u", 0.02, 8, "CSAD-Turbo", "");
    assert_eq!(code(&csad(&["train", "--config", s(&unknown)])), 2);

    let typo = digits_config(dir.path(), "t", 0.02, 8, "baseline", r#", "epochs": 3"#);
    assert_eq!(code(&csad(&["train", "--config", s(&typo)])), 2);

    let missing = dir.path().join("nope.json");
    assert_eq!(code(&csad(&["train", "--config", s(&missing)])), 2);
}

#[test]
fn train_then_eval_reproduces_train_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = digits_config(dir.path(), "run", 0.02, 8, "baseline", "");
    assert_eq!(code(&csad(&["gen-data", "--config", s(&cfg)])), 0);
    let o = csad(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("test_accuracy"));
    let run = dir.path().join("run");
    for f in ["checkpoint.bin", "history.jsonl", "report.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    let last_train = history
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter_map(|v| v["metrics"]["train_accuracy"].as_f64())
        .last()
        .expect("epoch metrics");

    let ckpt = run.join("checkpoint.bin");
    let o = csad(&["eval", "--checkpoint", s(&ckpt), "--data", s(&run.join("train"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: EvalReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report.accuracy, Some(last_train));
    let written: EvalReport =
        serde_json::from_str(&fs::read_to_string(run.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(written, report);
}

#[test]
fn eval_failures_exit_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let small = digits_config(dir.path(), "small", 0.02, 8, "baseline", "");
    let wide = digits_config(dir.path(), "wide", 0.02, 10, "baseline", "");
    assert_eq!(code(&csad(&["train", "--config", s(&small)])), 0);
    assert_eq!(code(&csad(&["gen-data", "--config", s(&wide)])), 0);
    let ckpt = dir.path().join("small/checkpoint.bin");

    let o = csad(&["eval", "--checkpoint", s(&ckpt), "--data", s(&dir.path().join("wide/test"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("features"), "{}", stderr(&o));

    // Colored digits carry no flippable feature column.
    assert_eq!(code(&csad(&["gen-data", "--config", s(&small)])), 0);
    let o = csad(&[
        "eval", "--checkpoint", s(&ckpt), "--data", s(&dir.path().join("small/test")), "--flip", "color",
    ]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("flip"), "{}", stderr(&o));
}

#[test]
fn sweep_writes_one_sorted_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = digits_config(dir.path(), "sweep", 0.02, 8, "baseline", "");
    let o = csad(&["sweep", "--config", s(&cfg), "--sigma2", "0.05,0.02", "--variants", "CSAD,baseline"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("sweep/table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant,sigma2,test_accuracy,seed");
    let keys: Vec<(String, String)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert!(!f[2].is_empty(), "{l}");
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    let expect = [("baseline", "0.02"), ("baseline", "0.05"), ("CSAD", "0.02"), ("CSAD", "0.05")];
    assert_eq!(keys.len(), 4);
    for (k, e) in keys.iter().zip(expect) {
        assert_eq!((k.0.as_str(), k.1.as_str()), e);
    }

    let o = csad(&["sweep", "--config", s(&cfg), "--variants", "CSAD,bogus"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn training_failure_exits_three_and_keeps_history() {
    let dir = tempfile::tempdir().unwrap();
    // Every row shares one protected value, so no batch has a negative pair
    // and the estimator cannot be trained.
    let mut body = String::from("x,g,y\n");
    for i in 0..64 {
        body.push_str(&format!("{},a,{}\n", i as f64 / 10.0, i % 2));
    }
    fs::write(dir.path().join("d.csv"), body).unwrap();
    let cfg = dir.path().join("tab.json");
    fs::write(
        &cfg,
        r#"{"data": {"kind": "tabular", "path": "d.csv",
             "schema": {"feature_columns": [{"name": "x", "kind": "numeric"}], "target_column": "y", "bias_columns": ["g"]}},
            "train": {"variant": "CSAD", "pair_policy": "same_label", "batch_size": 16,
                      "epochs_pretrain_target": 1, "epochs_pretrain_bias": 1, "epochs_pretrain_mi": 1, "epochs_main": 1},
            "outputs": "out"}"#,
    )
    .unwrap();
    let o = csad(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let history = fs::read_to_string(dir.path().join("out/history.jsonl")).unwrap();
    assert!(history.contains("pretrain_target"), "{history}");
    assert!(!dir.path().join("out/checkpoint.bin").exists());
}
