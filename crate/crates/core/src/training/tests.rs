use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{gen_colored_digits, ColoredDigitsConfig, DatasetMeta, Provenance, Split};
use crate::models::{build_bundle, ArchSpec};

fn group_hash(b: &ModelBundle, g: ParamGroup) -> u64 {
    let mut h = DefaultHasher::new();
    for p in b.group_params(g) {
        for v in p.tensor.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn hashes(b: &ModelBundle) -> Vec<u64> {
    ParamGroup::ALL.iter().map(|&g| group_hash(b, g)).collect()
}

/// Asserts that exactly the groups in `allowed` changed.
fn assert_changed(before: &[u64], after: &[u64], allowed: &[ParamGroup]) {
    for (k, g) in ParamGroup::ALL.iter().enumerate() {
        assert_eq!(
            before[k] != after[k],
            allowed.contains(g),
            "group {g:?} changed = {}",
            before[k] != after[k]
        );
    }
}

fn digits(n: usize, sigma2: f64, seed: u64) -> Dataset {
    let mut c = ColoredDigitsConfig::new(sigma2, n, n, seed);
    c.image_side = 8;
    gen_colored_digits(&c, Split::Train).unwrap()
}

fn small_bundle(seed: u64) -> ModelBundle {
    build_bundle(&ArchSpec::colored_digits_sized(192, &[48], 24), seed).unwrap()
}

fn cfg(variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        k: 3,
        batch_size: 32,
        epochs_pretrain_target: 1,
        epochs_pretrain_bias: 1,
        epochs_pretrain_mi: 1,
        epochs_main: 1,
        ..TrainConfig::default()
    }
}

fn batch(ds: &Dataset, n: usize) -> Batch {
    Batch::from_dataset(ds, &(0..n).collect::<Vec<_>>())
}

#[test]
fn each_phase_touches_only_its_groups() {
    let ds = digits(64, 0.02, 1);
    let mut b = small_bundle(1);
    let mut t = Trainer::new(&cfg(Variant::Csad));
    let bt = batch(&ds, 32);
    let omega = build_pair_set(&bt.bias, PairPolicy::ChannelTolerance(1)).unwrap();
    assert!(omega.is_estimable());

    let h0 = hashes(&b);
    t.target_update(&mut b, &bt).unwrap();
    let h1 = hashes(&b);
    assert_changed(&h0, &h1, &[ParamGroup::Extractor, ParamGroup::Target]);

    t.bias_updates(&mut b, &bt, 4).unwrap();
    let h2 = hashes(&b);
    assert_changed(&h1, &h2, &[ParamGroup::Bias]);

    t.mi_updates(&mut b, &bt, &omega, 4).unwrap();
    let h3 = hashes(&b);
    assert_changed(&h2, &h3, &[ParamGroup::Estimator]);

    t.adversarial_update(&mut b, &bt, &omega).unwrap();
    let h4 = hashes(&b);
    assert_changed(&h3, &h4, &[ParamGroup::Extractor]);
}

#[test]
fn pretraining_phases_touch_only_their_groups() {
    let ds = digits(96, 0.02, 2);
    let mut b = small_bundle(2);
    let c = cfg(Variant::Csad);
    let h0 = hashes(&b);
    pretrain_target(&mut b, &ds, &c).unwrap();
    let h1 = hashes(&b);
    assert_changed(&h0, &h1, &[ParamGroup::Extractor, ParamGroup::Target]);
    pretrain_bias(&mut b, &ds, &c).unwrap();
    let h2 = hashes(&b);
    assert_changed(&h1, &h2, &[ParamGroup::Bias]);
    pretrain_mi(&mut b, &ds, &c).unwrap();
    let h3 = hashes(&b);
    assert_changed(&h2, &h3, &[ParamGroup::Estimator]);
}

#[test]
fn inner_loops_take_exactly_k_steps() {
    let ds = digits(64, 0.02, 3);
    let mut b = small_bundle(3);
    let mut c = cfg(Variant::Csad);
    c.k = 10;
    let mut t = Trainer::new(&c);
    let rec = t.train_step(&mut b, &batch(&ds, 32), 0).unwrap();
    assert!(!rec.skipped);
    assert_eq!(
        t.optimizer_steps(),
        OptimizerSteps { target: 1, bias: 10, mi: 10, adversarial: 1 }
    );
    let keys: Vec<&str> = rec.losses.keys().map(String::as_str).collect();
    assert_eq!(keys, vec!["adversarial", "bias", "mi", "target"]);

    let mut t = Trainer::new(&cfg(Variant::Baseline));
    let h0 = hashes(&b);
    t.train_step(&mut b, &batch(&ds, 32), 0).unwrap();
    assert_eq!(t.optimizer_steps(), OptimizerSteps { target: 1, ..Default::default() });
    assert_changed(&h0, &hashes(&b), &[ParamGroup::Extractor, ParamGroup::Target]);
}

#[test]
fn zero_lambda_leaves_extractor_untouched() {
    let ds = digits(32, 0.02, 4);
    let mut b = small_bundle(4);
    let mut c = cfg(Variant::Csad);
    c.lambda = 0.0;
    let mut t = Trainer::new(&c);
    let bt = batch(&ds, 32);
    let omega = build_pair_set(&bt.bias, c.pair_policy).unwrap();
    let before = b.clone();
    t.adversarial_update(&mut b, &bt, &omega).unwrap();
    assert_eq!(b, before);
    assert_eq!(t.optimizer_steps().adversarial, 1);
}

fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    while y.len() < n {
        let (a, c): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let s = a + 2.0 * c;
        if s.abs() < 0.1 {
            continue;
        }
        x.extend([a, c]);
        y.push((s > 0.0) as usize);
    }
    let bias = (0..n).map(|i| (i % 2) as i32).collect();
    let meta = DatasetMeta {
        n,
        x_dim: 2,
        bias_arity: 1,
        num_classes: 2,
        bias_cardinalities: vec![2],
        provenance: Provenance::ColoredDigits {
            config: ColoredDigitsConfig::new(1.0, n, n, 0),
            split: Split::Train,
            palette: vec![],
        },
    };
    Dataset::new(Tensor::new(vec![n, 2], x).unwrap(), y, bias, meta).unwrap()
}

#[test]
fn separable_toy_is_learned() {
    let ds = separable(400, 0);
    let mut b = build_bundle(&ArchSpec::tabular(2, &[2]), 0).unwrap();
    let c = TrainConfig {
        variant: Variant::Baseline,
        batch_size: 16,
        epochs_pretrain_target: 30,
        lr_target: 1e-2,
        ..TrainConfig::default()
    };
    pretrain_target(&mut b, &ds, &c).unwrap();
    let acc = dataset_accuracy(&b, &ds).unwrap();
    assert!(acc > 0.99, "accuracy {acc}");
}

#[test]
fn target_loss_descends_on_a_fixed_batch() {
    let ds = digits(32, 0.02, 5);
    let mut b = small_bundle(5);
    let mut t = Trainer::new(&cfg(Variant::Baseline));
    let bt = batch(&ds, 32);
    let losses: Vec<f64> = (0..10).map(|_| t.target_update(&mut b, &bt).unwrap()).collect();
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "{losses:?}");
    }
}

#[test]
fn bias_loss_descends_and_heads_learn_color() {
    let ds = digits(512, 0.02, 6);
    let mut b = small_bundle(6);
    let mut c = cfg(Variant::Csad);
    c.epochs_pretrain_target = 3;
    c.epochs_pretrain_bias = 15;
    let bt = batch(&ds, 64);
    let mut t = Trainer::new(&c);
    t.pretrain_target(&mut b, &ds).unwrap();
    let first = t.bias_updates(&mut b, &bt, 1).unwrap();
    let later = t.bias_updates(&mut b, &bt, 20).unwrap();
    assert!(later < first, "{first} -> {later}");

    t.pretrain_bias(&mut b, &ds).unwrap();
    let fwd = b.forward(&ds.x).unwrap();
    for (ch, logits) in fwd.bias_logits.iter().enumerate() {
        let preds: Vec<usize> = (0..ds.len())
            .map(|i| {
                let r = logits.row(i);
                (0..8).fold(0, |m, j| if r[j] > r[m] { j } else { m })
            })
            .collect();
        let acc = accuracy(&preds, &ds.bias_channel(ch)).unwrap();
        assert!(acc > 0.5, "channel {ch} accuracy {acc}");
    }
}

#[test]
fn estimator_ascends_its_bound() {
    let ds = digits(64, 0.02, 7);
    let mut b = small_bundle(7);
    let mut t = Trainer::new(&cfg(Variant::Csad));
    let bt = batch(&ds, 64);
    let omega = build_pair_set(&bt.bias, PairPolicy::ChannelTolerance(1)).unwrap();
    let before = t.mi_value(&b, &bt, &omega).unwrap();
    t.mi_updates(&mut b, &bt, &omega, 50).unwrap();
    let after = t.mi_value(&b, &bt, &omega).unwrap();
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn adversarial_step_does_not_raise_the_bound() {
    let ds = digits(64, 0.02, 8);
    let mut b = small_bundle(8);
    let mut c = cfg(Variant::Csad);
    c.lr_adv = 1e-6;
    let mut t = Trainer::new(&c);
    let bt = batch(&ds, 64);
    let omega = build_pair_set(&bt.bias, c.pair_policy).unwrap();
    t.mi_updates(&mut b, &bt, &omega, 20).unwrap();
    let before = t.mi_value(&b, &bt, &omega).unwrap();
    t.adversarial_update(&mut b, &bt, &omega).unwrap();
    let after = t.mi_value(&b, &bt, &omega).unwrap();
    assert!(after <= before, "{before} -> {after}");
}

fn constant_bias(ds: &Dataset) -> Dataset {
    let bias = vec![0; ds.len() * 3];
    Dataset::new(ds.x.clone(), ds.y.clone(), bias, ds.meta.clone()).unwrap()
}

#[test]
fn degenerate_pairs_are_surfaced_or_skipped() {
    let ds = constant_bias(&digits(64, 0.02, 9));
    let mut b = small_bundle(9);
    let c = cfg(Variant::Csad);
    assert!(matches!(pretrain_mi(&mut b, &ds, &c), Err(Error::Estimation(_))));

    let mut t = Trainer::new(&c);
    let rec = t.train_step(&mut b, &batch(&ds, 32), 0).unwrap();
    assert!(rec.skipped);
    assert!(!rec.losses.contains_key("mi"));
    let s = t.optimizer_steps();
    assert_eq!((s.mi, s.adversarial), (0, 0));
}

#[test]
fn failed_fit_keeps_the_history_so_far() {
    let ds = constant_bias(&digits(64, 0.02, 9));
    let mut b = small_bundle(9);
    let (history, outcome) = fit_partial(&mut b, &ds, None, &cfg(Variant::Csad));
    assert!(matches!(outcome, Err(Error::Estimation(_))));
    let phases: Vec<Phase> = history.epochs().map(|e| e.phase).collect();
    assert_eq!(phases, [Phase::PretrainTarget, Phase::PretrainBias, Phase::PretrainMi]);
    assert!(history.steps().all(|s| s.phase != Phase::Main));
    assert!(matches!(fit(&mut b, &ds, None, &cfg(Variant::Csad)), Err(Error::Estimation(_))));
}

#[test]
fn fit_is_deterministic_with_monotone_steps() {
    let ds = digits(96, 0.02, 10);
    let ev = digits(40, 0.02, 11);
    let c = cfg(Variant::Csad);
    let mut b1 = small_bundle(10);
    let mut b2 = small_bundle(10);
    let h1 = fit(&mut b1, &ds, Some(&ev), &c).unwrap();
    let h2 = fit(&mut b2, &ds, Some(&ev), &c).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(b1, b2);
    let steps: Vec<u64> = h1.steps().map(|s| s.step).collect();
    assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));
    let last = h1.epochs().last().unwrap();
    assert_eq!(last.phase, Phase::Main);
    assert!(last.metrics.contains_key("eval_accuracy"));

    let mut c2 = c.clone();
    c2.seed = 1;
    let mut b3 = small_bundle(10);
    assert_ne!(fit(&mut b3, &ds, Some(&ev), &c2).unwrap(), h1);
}

#[test]
fn history_serializes_as_json_lines() {
    let ds = digits(64, 0.02, 12);
    let mut b = small_bundle(12);
    let h = fit(&mut b, &ds, None, &cfg(Variant::CsadStruc)).unwrap();
    let mut buf = Vec::new();
    h.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), h.records.len());
    let back: Vec<HistoryRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back, h.records);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["kind"], "step");
    assert_eq!(first["phase"], "pretrain_target");
}

#[test]
fn config_validation() {
    TrainConfig::default().validate().unwrap();
    let mut c = TrainConfig::default();
    c.k = 0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.lambda = 0.0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.batch_size = 7;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.lr_adv = -1.0;
    assert!(c.validate().is_err());
    let c: TrainConfig = serde_json::from_str(r#"{"variant":"CSAD-Struc","K":4}"#).unwrap();
    assert_eq!((c.variant, c.k), (Variant::CsadStruc, 4));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"variant":"CSAD-X"}"#).is_err());
    assert!(serde_json::from_str::<TrainConfig>(r#"{"kk":1}"#).is_err());
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
    }
    assert!(matches!("csad".parse::<Variant>(), Err(Error::Config(_))));
    assert!(Variant::Baseline.objective(RwrConfig::default()).is_none());
    let o = Variant::AdJsd.objective(RwrConfig::default()).unwrap();
    assert_eq!((o.similarity, o.bound), (Similarity::Content, Bound::Jsd));
}

#[test]
fn balanced_batches_split_evenly() {
    let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1];
    let s = balanced_batch_sampler(&labels, 8, 3).unwrap();
    for b in s.clone().take(5) {
        assert_eq!(b.len(), 8);
        assert_eq!(b.iter().filter(|&&i| labels[i] == 0).count(), 4);
    }
    let a: Vec<_> = s.take(6).collect();
    let b: Vec<_> = balanced_batch_sampler(&labels, 8, 3).unwrap().take(6).collect();
    assert_eq!(a, b);
    assert!(matches!(balanced_batch_sampler(&[1, 1, 1], 8, 0), Err(Error::Data(_))));
    assert!(matches!(balanced_batch_sampler(&[0, 0, 2], 8, 0), Err(Error::Data(_))));
}

#[test]
fn balanced_fit_uses_balanced_batches() {
    let ds = separable(100, 1);
    let mut b = build_bundle(&ArchSpec::tabular(2, &[2]), 1).unwrap();
    let c = TrainConfig {
        variant: Variant::Csad,
        batch_size: 16,
        balanced_batches: true,
        pair_policy: PairPolicy::SameLabel,
        k: 2,
        epochs_pretrain_target: 1,
        epochs_pretrain_bias: 1,
        epochs_pretrain_mi: 1,
        epochs_main: 1,
        ..TrainConfig::default()
    };
    let h = fit(&mut b, &ds, None, &c).unwrap();
    // 100 samples / batch 16 -> 6 batches per epoch, four phases.
    assert_eq!(h.steps().count(), 24);
}
