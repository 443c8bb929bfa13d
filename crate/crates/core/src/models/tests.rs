use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn small_arch() -> ArchSpec {
    ArchSpec::colored_digits_sized(12, &[16, 20], 8)
}

fn rand_input(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn default_colored_digit_layout() {
    let arch = ArchSpec::colored_digits(3 * 14 * 14);
    assert_eq!(arch.extractor.layer_sizes, vec![588, 256, 1024]);
    assert_eq!(arch.target_disentangler.layer_sizes, vec![1024, 128]);
    assert_eq!(arch.target_predictor.layer_sizes, vec![128, 64, 10]);
    assert_eq!(arch.bias_predictors.len(), 3);
    for p in &arch.bias_predictors {
        assert_eq!(p.layer_sizes, vec![128, 64, 8]);
    }
    assert_eq!(arch.mi_target.layer_sizes, vec![128, 64, 32, 32]);
    assert_eq!(arch.mi_bias.layer_sizes, vec![128, 64, 32, 32]);
    arch.validate().unwrap();
}

#[test]
fn scalars_start_at_documented_values() {
    let b = build_bundle(&small_arch(), 0).unwrap();
    assert_eq!(b.alpha.tensor.data(), &[1.0]);
    assert_eq!(b.tau.tensor.data(), &[10.0]);
}

#[test]
fn same_seed_same_bits() {
    let a = build_bundle(&small_arch(), 42).unwrap();
    let b = build_bundle(&small_arch(), 42).unwrap();
    assert_eq!(a, b);
    let c = build_bundle(&small_arch(), 43).unwrap();
    assert_ne!(a, c);
}

#[test]
fn chain_mismatch_is_a_config_error() {
    let mut arch = small_arch();
    arch.bias_disentangler.layer_sizes = vec![19, 8];
    assert!(matches!(build_bundle(&arch, 0), Err(Error::Config(_))));

    let mut arch = small_arch();
    arch.mi_bias.layer_sizes = vec![8, 64, 16];
    assert!(matches!(build_bundle(&arch, 0), Err(Error::Config(_))));

    let mut arch = small_arch();
    arch.target_predictor.layer_sizes = vec![8];
    assert!(matches!(build_bundle(&arch, 0), Err(Error::Config(_))));
}

#[test]
fn zero_input_gives_zero_logits_at_init() {
    let b = build_bundle(&small_arch(), 3).unwrap();
    let fwd = b.forward(&Tensor::zeros(vec![2, 12])).unwrap();
    assert!(fwd.target_logits.data().iter().all(|&v| v == 0.0));
    for l in &fwd.bias_logits {
        assert!(l.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn forward_is_batch_independent_and_pure() {
    let b = build_bundle(&small_arch(), 5).unwrap();
    let x8 = rand_input(8, 12, 1);
    let x1 = x8.select_rows(&[0]);
    let f8 = b.forward(&x8).unwrap();
    let f1 = b.forward(&x1).unwrap();
    assert_eq!(f1.target_logits.row(0), f8.target_logits.row(0));
    assert_eq!(f1.hy.row(0), f8.hy.row(0));
    assert_eq!(f1.bias_logits[2].row(0), f8.bias_logits[2].row(0));
    assert_eq!(b.forward(&x8).unwrap(), f8);
    assert_ne!(f8.hy, f8.hb);
    assert_eq!(f8.bias_logits.len(), 3);
    assert_eq!(f8.h.shape(), &[8, 20]);
    assert_eq!(f8.target_logits.shape(), &[8, 10]);
}

#[test]
fn embed_is_batch_independent_and_pure() {
    let b = build_bundle(&small_arch(), 6).unwrap();
    let f = b.forward(&rand_input(6, 12, 2)).unwrap();
    let (ey, eb) = b.embed(&f.hy, &f.hb).unwrap();
    let (ey1, eb1) = b.embed(&f.hy.select_rows(&[0]), &f.hb.select_rows(&[0])).unwrap();
    assert_eq!(ey.row(0), ey1.row(0));
    assert_eq!(eb.row(0), eb1.row(0));
    assert_eq!(b.embed(&f.hy, &f.hb).unwrap(), (ey.clone(), eb));
    assert_eq!(ey.shape(), &[6, 32]);
    assert!(b.embed(&f.hb, &Tensor::zeros(vec![6, 3])).is_err());
}

#[test]
fn wrong_input_width_is_a_dimension_error() {
    let b = build_bundle(&small_arch(), 7).unwrap();
    assert!(matches!(
        b.forward(&Tensor::zeros(vec![2, 11])),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn groups_partition_parameters_with_unique_names() {
    let b = build_bundle(&small_arch(), 8).unwrap();
    let mut seen = HashSet::new();
    let mut total = 0;
    for g in ParamGroup::ALL {
        for p in b.group_params(g) {
            assert!(seen.insert(p.name.clone()), "{} in two groups", p.name);
            total += 1;
        }
    }
    assert_eq!(total, b.all_params().len());
    let est: Vec<_> = b
        .group_params(ParamGroup::Estimator)
        .iter()
        .map(|p| p.name.clone())
        .collect();
    assert!(est.contains(&"alpha".to_string()) && est.contains(&"tau".to_string()));
}

#[test]
fn bound_group_vars_align_with_params() {
    let b = build_bundle(&small_arch(), 9).unwrap();
    let tape = Tape::new();
    let bound = b.bind(&tape, &[ParamGroup::Bias]);
    for g in ParamGroup::ALL {
        let vars = bound.group_vars(g);
        let params = b.group_params(g);
        assert_eq!(vars.len(), params.len());
        for (v, p) in vars.iter().zip(params) {
            assert_eq!(v.shape(), p.tensor.shape());
            assert_eq!(v.requires_grad(), g == ParamGroup::Bias);
        }
    }
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let mut b = build_bundle(&small_arch(), 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in b.all_params_mut() {
        for v in p.tensor.data_mut() {
            *v = rng.gen_range(-1e3..1e3) * 1.000_000_1;
        }
    }
    b.tau.tensor.data_mut()[0] = f64::MIN_POSITIVE;
    let mut buf = Vec::new();
    write_checkpoint(&b, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    for (p, q) in b.all_params().iter().zip(back.all_params()) {
        assert_eq!(p.name, q.name);
        let pb: Vec<u64> = p.tensor.data().iter().map(|v| v.to_bits()).collect();
        let qb: Vec<u64> = q.tensor.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(pb, qb);
    }
    assert_eq!(back.arch, b.arch);
    assert_eq!(back.seed, 10);
}

#[test]
fn checkpoint_rejects_bad_magic_and_truncation() {
    let b = build_bundle(&small_arch(), 11).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&b, &mut buf).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
    buf.truncate(buf.len() - 3);
    assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Format(_))));
}

#[test]
fn tabular_layout_uses_single_logit() {
    let arch = ArchSpec::tabular(41, &[2, 2]);
    arch.validate().unwrap();
    let b = build_bundle(&arch, 0).unwrap();
    assert!(b.binary_target());
    assert_eq!(b.bias_predictors.len(), 2);
}
