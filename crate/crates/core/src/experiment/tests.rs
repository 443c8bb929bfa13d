use std::fs;

use super::*;

#[test]
fn sub_seeds_are_stable_and_distinct() {
    assert_eq!(sub_seed(0, "data"), sub_seed(0, "data"));
    let names = ["data", "init", "shuffle"];
    let mut all = Vec::new();
    for seed in 0..4 {
        for n in names {
            all.push(sub_seed(seed, n));
        }
    }
    let mut dedup = all.clone();
    dedup.sort_unstable();
    dedup.dedup();
    assert_eq!(dedup.len(), all.len());
    // Nearby top-level seeds must not give nearby sub-seeds.
    assert!((sub_seed(1, "data") ^ sub_seed(0, "data")).count_ones() > 8);
}

fn digits_json(extra: &str) -> String {
    format!(
        r#"{{"seed": 3, "data": {{"kind": "colored_digits", "sigma2": 0.02, "n_train": 64, "n_test": 32, "image_side": 8}},
            "train": {{"variant": "CSAD-Content", "K": 2, "epochs_main": 1}}, "outputs": "out"{extra}}}"#
    )
}

#[test]
fn config_parses_and_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    fs::write(&p, digits_json("")).unwrap();
    let cfg = ExperimentConfig::from_path(&p).unwrap();
    assert_eq!(cfg.outputs, dir.path().join("out"));
    assert_eq!(cfg.train.variant, Variant::CsadContent);
    assert_eq!(cfg.train.k, 2);
    assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    assert_eq!(cfg.sigma2(), Some(0.02));
    assert_eq!(cfg.train_config().seed, sub_seed(3, "shuffle"));
}

#[test]
fn config_rejects_unknown_fields_and_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    let bad = [
        digits_json(r#", "extra": 1"#),
        digits_json("").replace(r#""K": 2"#, r#""K": 2, "momentum": 0.9"#),
        digits_json("").replace("0.02", "0.0"),
        digits_json("").replace("CSAD-Content", "CSAD-Magic"),
        digits_json(r#", "sweep": {"sigma2": [], "variants": ["CSAD"]}"#),
        digits_json(r#", "sweep": {"sigma2": [-0.1], "variants": ["CSAD"]}"#),
    ];
    for text in bad {
        fs::write(&p, &text).unwrap();
        assert!(
            matches!(ExperimentConfig::from_path(&p), Err(Error::Config(_))),
            "accepted {text}"
        );
    }
}

#[test]
fn cell_overrides_variant_sigma_and_seed() {
    let cfg: ExperimentConfig = serde_json::from_str(&digits_json("")).unwrap();
    let c = cfg.cell(Variant::Baseline, 0.05, 9);
    assert_eq!((c.train.variant, c.sigma2(), c.seed), (Variant::Baseline, Some(0.05), 9));
    assert_eq!(c.digits_config(c.seed).unwrap().seed, sub_seed(9, "data"));
}

fn tiny_base(out: &Path) -> ExperimentConfig {
    let mut cfg: ExperimentConfig = serde_json::from_str(&digits_json("")).unwrap();
    cfg.outputs = out.to_path_buf();
    cfg.model = Some(ModelConfig { hidden: vec![16], feature: 8 });
    cfg.train.batch_size = 16;
    cfg.train.epochs_pretrain_target = 1;
    cfg.train.epochs_pretrain_bias = 1;
    cfg.train.epochs_pretrain_mi = 1;
    cfg
}

#[test]
fn sweep_table_layout_and_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_base(dir.path());
    let sweep = SweepConfig {
        sigma2: vec![0.05, 0.02],
        variants: vec![Variant::Csad, Variant::Baseline],
        seeds: vec![0],
    };
    let mut cells = sweep_cells(&sweep);
    assert_eq!(cells.len(), 4);
    cells.push(SweepCell { variant: Variant::Baseline, sigma2: 0.0, seed: 0 });
    let rows = run_sweep(&base, &cells, Some(dir.path())).unwrap();
    assert_eq!(rows.len(), 5);

    let failed: Vec<_> = rows.iter().filter(|r| r.error.is_some()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].sigma2, 0.0);
    assert!(failed[0].test_accuracy.is_none());

    let text = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "variant,sigma2,test_accuracy,seed");
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[1], "baseline,0,,0");
    assert!(lines[2].starts_with("baseline,0.02,"));
    assert!(lines[3].starts_with("baseline,0.05,"));
    assert!(lines[4].starts_with("CSAD,0.02,"));
    for l in &lines[2..] {
        let acc: f64 = l.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let cell = dir.path().join("cells").join("CSAD_0.02_0");
    for f in ["checkpoint.bin", "history.jsonl", "report.json"] {
        assert!(cell.join(f).is_file(), "{f}");
    }
    let seeds0 = mean_accuracy(&rows, Variant::Csad, 0.02).unwrap();
    assert_eq!(Some(seeds0), rows.iter().find(|r| r.variant == Variant::Csad && r.sigma2 == 0.02).unwrap().test_accuracy);
    assert_eq!(mean_accuracy(&rows, Variant::Baseline, 0.0), None);
}

fn tabular_cfg(dir: &Path) -> ExperimentConfig {
    // `sex` is both a feature and the protected attribute, so it can be
    // flipped; the label depends on `score` only.
    let mut body = String::from("score,sex,city,label\n");
    for i in 0..120 {
        let score = (i % 17) as f64 / 4.0;
        let sex = ["m", "f"][(i / 3) % 2];
        let city = ["a", "b", "c"][i % 3];
        let label = if score > 2.0 { "yes" } else { "no" };
        body.push_str(&format!("{score},{sex},{city},{label}\n"));
    }
    fs::write(dir.join("t.csv"), body).unwrap();
    let json = r#"{"data": {"kind": "tabular", "path": "t.csv", "test_fraction": 0.25,
        "schema": {"feature_columns": [{"name": "score", "kind": "numeric"}, {"name": "sex", "kind": "categorical"},
                   {"name": "city", "kind": "categorical"}], "target_column": "label", "bias_columns": ["sex"]}},
        "train": {"variant": "CSAD", "pair_policy": "same_label", "batch_size": 16, "K": 2, "lr_target": 0.01,
                  "epochs_pretrain_target": 10, "epochs_pretrain_bias": 1, "epochs_pretrain_mi": 1, "epochs_main": 2},
        "outputs": "run"}"#;
    fs::write(dir.join("cfg.json"), json).unwrap();
    ExperimentConfig::from_path(&dir.join("cfg.json")).unwrap()
}

#[test]
fn tabular_run_reports_fairness_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tabular_cfg(dir.path());
    let out = train_and_save(&cfg).unwrap();
    let (_, test) = load_data(&cfg).unwrap();
    let r = evaluate(&out.bundle, &test, &["sex".to_string()]).unwrap();
    for v in [r.accuracy, r.balanced_accuracy, r.auc, r.average_precision, r.f1] {
        let v = v.expect("metric present");
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(r.gap_rms["sex"] <= r.gap_max["sex"] + 1e-15);
    assert!((0.0..=1.0).contains(&r.consistency["sex"]));
    assert!(cfg.outputs.join("report.json").is_file());

    // Flipping twice restores the data, so predictions are unchanged.
    let twice = crate::data::flip_attribute(&crate::data::flip_attribute(&test, "sex").unwrap(), "sex").unwrap();
    assert_eq!(
        predict(&out.bundle, &twice.x).unwrap(),
        predict(&out.bundle, &test.x).unwrap()
    );
    assert!(matches!(evaluate(&out.bundle, &test, &["city".into()]), Err(Error::Flip(_))));
}

#[test]
fn tabular_rejects_channel_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tabular_cfg(dir.path());
    cfg.train.pair_policy = PairPolicy::ChannelTolerance(1);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn evaluate_rejects_width_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_base(dir.path());
    let (train, _) = load_data(&cfg).unwrap();
    let bundle = build_model(&cfg, &train).unwrap();
    let mut other = cfg.clone();
    other.data = DataConfig::ColoredDigits {
        sigma2: 0.02,
        n_train: 16,
        n_test: 16,
        image_side: 10,
        source: DigitSource::Procedural,
    };
    let (wide, _) = load_data(&other).unwrap();
    assert!(matches!(evaluate(&bundle, &wide, &[]), Err(Error::Dimension(_))));
}

#[test]
fn gen_data_persists_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_base(dir.path());
    let (tr, te) = gen_data(&cfg).unwrap();
    assert_eq!((tr.n, te.n, tr.x_dim), (64, 32, 8 * 8 * 3));
    assert_eq!(tr.bias_entropy.len(), 3);
    assert!(tr.bias_entropy.iter().all(|&h| h > 0.0 && h <= 8f64.ln() + 1e-12));
    let back = Dataset::load(&dir.path().join("train")).unwrap();
    assert_eq!(back.len(), 64);
}
