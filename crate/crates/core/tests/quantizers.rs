//! Quantizers checked against independent oracles.

use lutq_core::quant::{
    dynamic_range, kmeans_init, kmeans_prune, kmeans_step, kmeans_step_fixed, lookup, lutq_quantize,
    quantization_error, quantize_fp, quantize_pow2_fixed, round_pow2, AssignmentTensor, Constraint, Dictionary,
    QuantizerConfig,
};
use lutq_core::{LutqError, Rng, Tensor};
use proptest::prelude::*;

fn t(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec()).unwrap()
}

fn random_weights(rng: &mut Rng, n: usize) -> Tensor {
    t(&(0..n).map(|_| rng.normal()).collect::<Vec<_>>())
}

/// `2^b` for integer `b` by repeated doubling or halving.
fn pow2_oracle(b: i32) -> f64 {
    let mut v = 1.0;
    for _ in 0..b.unsigned_abs() {
        v = if b > 0 { v * 2.0 } else { v / 2.0 };
    }
    v
}

fn round_pow2_oracle(v: f64) -> f64 {
    let b = v.abs().log2();
    let lo = b.floor();
    let e = if b - lo <= 1.5f64.log2() { lo } else { lo + 1.0 };
    v.signum() * pow2_oracle(e as i32)
}

fn quantize_fp_oracle(w: f64, n: u32, delta: f64) -> f64 {
    let top = ((1i64 << (n - 1)) - 1) as f64;
    let x = w.abs() / delta;
    let k = if x <= top { (x + 0.5).floor() } else { top };
    w.signum() * delta * k
}

fn quantize_pow2_fixed_oracle(w: f64, n: u32, m: i32) -> f64 {
    let a = w.abs();
    let floor_exp = m as f64 - (1i64 << (n - 2)) as f64 + 0.5;
    if a <= floor_exp.exp2() {
        0.0
    } else if a <= pow2_oracle(m) {
        w.signum() * pow2_oracle((a.log2() + 0.5).floor() as i32)
    } else {
        w.signum() * pow2_oracle(m)
    }
}

/// Global optimum of the K=2 problem: best centroid pair over all splits.
fn brute_force_k2(w: &[f64]) -> f64 {
    let n = w.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for (i, &v) in w.iter().enumerate() {
            let g = ((mask >> i) & 1) as usize;
            sums[g] += v;
            counts[g] += 1;
        }
        let means = [0, 1].map(|g| if counts[g] > 0 { sums[g] / counts[g] as f64 } else { 0.0 });
        let err: f64 = w
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let d = v - means[((mask >> i) & 1) as usize];
                0.5 * d * d
            })
            .sum();
        best = best.min(err);
    }
    best
}

#[test]
fn lookup_gathers_exactly() {
    let d = Dictionary::free(vec![0.5, -1.0]).unwrap();
    let a = AssignmentTensor::new(vec![3], vec![0, 1, 0]).unwrap();
    assert_eq!(lookup(&d, &a).unwrap().data(), &[0.5, -1.0, 0.5]);
    let bad = AssignmentTensor::new(vec![2], vec![0, 2]).unwrap();
    assert!(matches!(lookup(&d, &bad), Err(LutqError::Index { .. })));
}

#[test]
fn kmeans_step_hand_example() {
    let w = t(&[0.1, 0.2, 0.9, 1.0]);
    let d = Dictionary::free(vec![0.0, 1.0]).unwrap();
    let (d, a) = kmeans_step(&w, &d, &AssignmentTensor::filled(&[4], 0)).unwrap();
    assert_eq!(a.indices(), &[0, 0, 1, 1]);
    assert!((d.values()[0] - 0.15).abs() < 1e-15);
    assert!((d.values()[1] - 0.95).abs() < 1e-15);
}

#[test]
fn kmeans_step_constant_fixed_point() {
    let c = 0.3_f64;
    let w = t(&[c, c, c]);
    let d = Dictionary::free(vec![c]).unwrap();
    let (d2, a2) = kmeans_step(&w, &d, &AssignmentTensor::filled(&[3], 0)).unwrap();
    assert_eq!(d2.values(), &[c]);
    assert_eq!(quantization_error(&w, &d2, &a2).unwrap(), 0.0);
}

#[test]
fn fixed_assignment_examples() {
    let w = t(&[-0.3, 0.0, 2.0]);
    let a = kmeans_step_fixed(&w, &Dictionary::binary()).unwrap();
    assert_eq!(a.indices(), &[0, 0, 1]);
    let a = kmeans_step_fixed(&t(&[0.4, -0.6, 0.05]), &Dictionary::ternary()).unwrap();
    assert_eq!(a.indices(), &[1, 0, 1]);
}

#[test]
fn prune_hand_example() {
    let w = t(&[0.05, -0.02, 0.5, -0.6, 0.1, 0.3]);
    let (d, a) = kmeans_prune(&w, 3, 0.5).unwrap();
    let q = lookup(&d, &a).unwrap();
    let zeros: Vec<usize> = (0..6).filter(|&i| q.data()[i] == 0.0).collect();
    assert_eq!(zeros, vec![0, 1, 4]);
    assert_eq!(d.values()[0], 0.0);
    let mut rest = d.values()[1..].to_vec();
    rest.sort_by(f64::total_cmp);
    assert!((rest[0] + 0.6).abs() < 1e-12 && (rest[1] - 0.4).abs() < 1e-12);
}

#[test]
fn prune_without_enough_survivors_is_an_error() {
    let w = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
    assert!(kmeans_prune(&w, 3, 0.999).is_err());
}

#[test]
fn round_pow2_examples() {
    assert_eq!(round_pow2(1.5).unwrap(), 1.0);
    assert_eq!(round_pow2(3.0).unwrap(), 2.0);
    assert_eq!(round_pow2(-0.7).unwrap(), -0.5);
    assert!(round_pow2(0.0).is_err());
}

#[test]
fn fixed_quantizer_examples() {
    assert_eq!(quantize_fp(0.3, 4, 0.25).unwrap(), 0.25);
    assert_eq!(quantize_fp(2.5, 4, 0.25).unwrap(), 1.75);
    assert_eq!(quantize_fp(0.0, 4, 0.25).unwrap(), 0.0);
    assert!(quantize_fp(0.3, 4, 0.3).is_err());
    assert_eq!(quantize_pow2_fixed(0.3, 3, 0).unwrap(), 0.0);
    assert_eq!(quantize_pow2_fixed(0.6, 3, 0).unwrap(), 0.5);
    assert_eq!(quantize_pow2_fixed(1.3, 3, 0).unwrap(), 1.0);
}

#[test]
fn dynamic_range_examples() {
    assert_eq!(dynamic_range(&t(&[0.1, -0.7])).unwrap(), 1.0);
    assert_eq!(dynamic_range(&t(&[1.0])).unwrap(), 1.0);
    assert_eq!(dynamic_range(&t(&[1.2, 0.0])).unwrap(), 2.0);
    assert!(dynamic_range(&t(&[0.0, 0.0])).is_err());
}

#[test]
fn lutq_quantize_examples() {
    let w = t(&[0.1, 0.2, 0.9, 1.0]);
    let q = lutq_quantize(&w, &QuantizerConfig::free(2), None).unwrap();
    assert!((q.dict().values()[0] - 0.15).abs() < 1e-15);
    assert!((q.dict().values()[1] - 0.95).abs() < 1e-15);
    let q = lutq_quantize(&w, &QuantizerConfig::pow2(2), None).unwrap();
    assert_eq!(q.dict().values(), &[0.125, 1.0]);
    let w = t(&[-0.2, 0.0, 0.3, -5.0]);
    let q = lutq_quantize(&w, &QuantizerConfig::binary(), None).unwrap();
    assert_eq!(q.q().data(), &[-1.0, -1.0, 1.0, -1.0]);
}

#[test]
fn quantizers_match_closed_forms() {
    let mut rng = Rng::new(11);
    for _ in 0..10_000 {
        let v = rng.uniform(-8.0, 8.0);
        if v != 0.0 {
            assert_eq!(round_pow2(v).unwrap(), round_pow2_oracle(v), "round_pow2({v})");
            let ratio = round_pow2(v).unwrap() / v;
            assert!((2.0 / 3.0..4.0 / 3.0).contains(&ratio));
        }
        let n = 2 + rng.below(7) as u32;
        let delta = pow2_oracle(rng.below(8) as i32 - 5);
        assert_eq!(quantize_fp(v, n, delta).unwrap(), quantize_fp_oracle(v, n, delta), "fp({v},{n},{delta})");
        let m = rng.below(6) as i32 - 3;
        assert_eq!(
            quantize_pow2_fixed(v, n, m).unwrap(),
            quantize_pow2_fixed_oracle(v, n, m),
            "pow2_fixed({v},{n},{m})"
        );
    }
}

#[test]
fn kmeans_never_increases_error() {
    let mut rng = Rng::new(5);
    for _ in 0..1000 {
        let n = 2 + rng.below(60);
        let w = random_weights(&mut rng, n);
        let k = 1 + rng.below(n.min(8));
        let d0: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let mut dict = Dictionary::free(d0).unwrap();
        let idx: Vec<u32> = (0..n).map(|_| rng.below(k) as u32).collect();
        let mut assign = AssignmentTensor::new(vec![n], idx).unwrap();
        let mut before = quantization_error(&w, &dict, &assign).unwrap();
        for _ in 0..3 {
            let (d, a) = kmeans_step(&w, &dict, &assign).unwrap();
            let after = quantization_error(&w, &d, &a).unwrap();
            assert!(after <= before, "{after} > {before}");
            before = after;
            dict = d;
            assign = a;
        }
    }
}

/// Twelve or fewer weights drawn alternately around two random centres.
fn two_cluster_weights(rng: &mut Rng) -> Tensor {
    let n = 3 + rng.below(10);
    let c = [rng.uniform(-3.0, -1.0), rng.uniform(1.0, 3.0)];
    t(&(0..n).map(|i| c[i % 2] + 0.3 * rng.normal()).collect::<Vec<_>>())
}

#[test]
fn converged_k2_is_near_global_optimum() {
    let mut rng = Rng::new(1234);
    for _ in 0..50 {
        let w = two_cluster_weights(&mut rng);
        let (d, a) = kmeans_init(&w, 2, Constraint::Free).unwrap();
        let err = quantization_error(&w, &d, &a).unwrap();
        let best = brute_force_k2(w.data());
        assert!(err >= best - 1e-12);
        assert!(err <= 1.05 * best + 1e-12, "{err} vs optimum {best}");
    }
}

#[test]
fn converged_k2_never_beats_global_optimum() {
    let mut rng = Rng::new(4321);
    for _ in 0..200 {
        let n = 3 + rng.below(10);
        let w = random_weights(&mut rng, n);
        let (d, a) = kmeans_init(&w, 2, Constraint::Free).unwrap();
        assert!(quantization_error(&w, &d, &a).unwrap() >= brute_force_k2(w.data()) - 1e-12);
    }
}

#[test]
fn prune_count_grid() {
    let mut rng = Rng::new(77);
    for _ in 0..20 {
        let n = 50 + rng.below(500);
        let w = random_weights(&mut rng, n);
        for step in 0..10 {
            let p = step as f64 / 10.0;
            let (d, a) = kmeans_prune(&w, 4, p).unwrap();
            assert_eq!(d.values()[0], 0.0);
            assert_eq!(a.count(0), (p * n as f64 - 1e-9).ceil() as usize, "p={p} n={n}");
        }
    }
}

#[test]
fn converged_pair_is_a_fixed_point() {
    let mut rng = Rng::new(8);
    let w = random_weights(&mut rng, 40);
    let (d, a) = kmeans_init(&w, 3, Constraint::Free).unwrap();
    let (d2, a2) = kmeans_step(&w, &d, &a).unwrap();
    assert_eq!(d2, d);
    assert_eq!(a2, a);
}

proptest! {
    #[test]
    fn binary_is_sign_with_negative_zero(v in proptest::collection::vec(-3.0f64..3.0, 1..50)) {
        let a = kmeans_step_fixed(&t(&v), &Dictionary::binary()).unwrap();
        for (x, &i) in v.iter().zip(a.indices()) {
            prop_assert_eq!(i, u32::from(*x > 0.0));
        }
    }

    #[test]
    fn pow2_dictionary_entries_are_powers_of_two(seed in 0u64..500, k in 1usize..6) {
        let mut rng = Rng::new(seed);
        let w = random_weights(&mut rng, 30);
        let q = lutq_quantize(&w, &QuantizerConfig::pow2(k), None).unwrap();
        for &v in q.dict().values() {
            prop_assert_eq!(round_pow2_oracle(v), v);
        }
    }
}
