//! Straight-through gradients, batch normalization and desk-scale training.

use lutq_core::nn::{
    bn_fold_scale, softmax_cross_entropy, train, AffineLayer, BatchNormLayer, BnMode, Dataset, Layer, Network,
    TrainConfig,
};
use lutq_core::quant::{is_pow2, round_pow2, QuantizerConfig};
use lutq_core::{rng_uniform, Rng, Tensor};

fn loss_of(net: &Network, x: &Tensor, labels: &[usize]) -> f64 {
    let (out, _) = net.forward(x, false).unwrap();
    softmax_cross_entropy(&out, labels).unwrap().0
}

/// Copy of `net` whose weights are the quantized `Q`, with quantization off.
fn dequantized(net: &Network) -> Network {
    let mut plain = net.clone();
    for layer in &mut plain.layers {
        if let Layer::Affine(l) = layer {
            l.w_full = l.weight().unwrap().clone();
            l.quant = None;
        }
    }
    plain
}

fn quantized_mlp(seed: u64) -> Network {
    let mut rng = Rng::new(seed);
    let mut net = Network::mlp(&mut rng, &[3, 5, 4], None).unwrap();
    net.quantize_all(&QuantizerConfig::free(4)).unwrap();
    net.refresh_quantization(1).unwrap();
    // Move the accumulators away from Q so pass-through is observable.
    for layer in &mut net.layers {
        if let Layer::Affine(l) = layer {
            let noise = rng_uniform(&mut rng, l.w_full.shape(), -0.3, 0.3).unwrap();
            l.w_full = l.w_full.add(&noise).unwrap();
        }
    }
    net
}

#[test]
fn ste_gradient_matches_finite_differences_on_q() {
    let mut points = 0;
    for seed in 0..10 {
        let net = quantized_mlp(seed);
        let mut rng = Rng::new(100 + seed);
        let x = rng_uniform(&mut rng, &[6, 3], -1.0, 1.0).unwrap();
        let labels: Vec<usize> = (0..6).map(|_| rng.below(4)).collect();
        let (out, cache) = net.forward(&x, true).unwrap();
        let (_, g) = softmax_cross_entropy(&out, &labels).unwrap();
        let grads = net.backward_ste(&g, &cache).unwrap();

        let plain = dequantized(&net);
        let (pout, pcache) = plain.forward(&x, true).unwrap();
        let (_, pg) = softmax_cross_entropy(&pout, &labels).unwrap();
        let pgrads = plain.backward_ste(&pg, &pcache).unwrap();
        for idx in [0, 1] {
            // Gradient w.r.t. w_full is the gradient w.r.t. Q, bit for bit.
            assert_eq!(grads.params[idx][0], pgrads.params[idx][0]);
        }

        for _ in 0..10 {
            let layer = rng.below(2);
            let Layer::Affine(l) = &plain.layers[layer] else { unreachable!() };
            let k = rng.below(l.w_full.len());
            let h = 1e-5;
            let bump = |delta: f64| {
                let mut p = plain.clone();
                let Layer::Affine(l) = &mut p.layers[layer] else { unreachable!() };
                let mut data = l.w_full.data().to_vec();
                data[k] += delta;
                l.w_full = Tensor::new(l.w_full.shape().to_vec(), data).unwrap();
                loss_of(&p, &x, &labels)
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an = grads.params[layer][0].data()[k];
            let scale = an.abs().max(fd.abs()).max(1e-3);
            assert!((an - fd).abs() / scale < 1e-5, "analytic {an} vs finite difference {fd}");
            points += 1;
        }
    }
    assert_eq!(points, 100);
}

#[test]
fn ste_scalar_example() {
    // y = q·x with q = 0.5 from a binary-like dictionary while w_full = 3.
    let mut layer = AffineLayer::new(
        Tensor::new(vec![1, 1], vec![3.0]).unwrap(),
        Tensor::zeros(&[1]),
        lutq_core::nn::Activation::Identity,
    )
    .unwrap();
    layer.quant = Some(lutq_core::nn::LayerQuant::new(QuantizerConfig::new(
        lutq_core::quant::QuantScheme::Fixed { values: vec![0.5] },
    )));
    let mut net = Network::new(vec![Layer::Affine(layer)]);
    net.refresh_quantization(1).unwrap();
    let x = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
    let (y, cache) = net.forward(&x, true).unwrap();
    assert_eq!(y.data(), &[1.0]);
    let t = 4.0;
    let g = Tensor::new(vec![1, 1], vec![y.data()[0] - t]).unwrap();
    let grads = net.backward_ste(&g, &cache).unwrap();
    assert_eq!(grads.params[0][0].data(), &[(0.5 * 2.0 - t) * 2.0]);
}

fn bn_with(gamma: f64, var: f64, mean: f64, beta: f64, mode: BnMode) -> BatchNormLayer {
    let mut bn = BatchNormLayer::new(1, 1e-300, mode).unwrap();
    bn.gamma = Tensor::from_vec(vec![gamma]).unwrap();
    bn.beta = Tensor::from_vec(vec![beta]).unwrap();
    bn.running_mean = Tensor::from_vec(vec![mean]).unwrap();
    bn.running_var = Tensor::from_vec(vec![var]).unwrap();
    bn
}

#[test]
fn bn_fold_examples() {
    let (a, _) = bn_fold_scale(&bn_with(0.75, 1.0, 0.0, 0.0, BnMode::MultiplierLess)).unwrap();
    assert_eq!(a.data(), &[0.5]);
    let (a, b) = bn_fold_scale(&bn_with(1.0, 1.0, 0.0, 0.0, BnMode::Traditional)).unwrap();
    assert_eq!((a.data()[0], b.data()[0]), (1.0, 0.0));
    let (a, b) = bn_fold_scale(&bn_with(2.0, 4.0, 3.0, 1.0, BnMode::Traditional)).unwrap();
    assert_eq!((a.data()[0], b.data()[0]), (1.0, -2.0));
}

fn random_bn(rng: &mut Rng, c: usize, mode: BnMode) -> BatchNormLayer {
    let mut bn = BatchNormLayer::new(c, 1e-5, mode).unwrap();
    bn.gamma = rng_uniform(rng, &[c], -2.0, 2.0).unwrap();
    bn.beta = rng_uniform(rng, &[c], -1.0, 1.0).unwrap();
    bn.running_mean = rng_uniform(rng, &[c], -1.0, 1.0).unwrap();
    bn.running_var = rng_uniform(rng, &[c], 0.01, 3.0).unwrap();
    bn
}

#[test]
fn multiplierless_scales_are_powers_of_two() {
    let mut rng = Rng::new(21);
    for _ in 0..200 {
        let bn = random_bn(&mut rng, 8, BnMode::MultiplierLess);
        let (a, _) = bn_fold_scale(&bn).unwrap();
        for j in 0..8 {
            let raw = bn.gamma.data()[j] / (bn.running_var.data()[j] + bn.eps).sqrt();
            let s = a.data()[j];
            assert!(is_pow2(s) && s.abs().log2().fract() == 0.0);
            assert_eq!(s, round_pow2(raw).unwrap());
            assert!((2.0 / 3.0..4.0 / 3.0).contains(&(s / raw)));
        }
    }
}

#[test]
fn traditional_bn_matches_direct_normalization() {
    let mut rng = Rng::new(22);
    for _ in 0..200 {
        let c = 6;
        let bn = random_bn(&mut rng, c, BnMode::Traditional);
        let x = rng_uniform(&mut rng, &[4, c], -3.0, 3.0).unwrap();
        let (y, _) = Layer::BatchNorm(bn.clone()).forward(&x, false).unwrap();
        for (idx, (&v, &out)) in x.data().iter().zip(y.data()).enumerate() {
            let j = idx % c;
            let direct = bn.gamma.data()[j] * (v - bn.running_mean.data()[j])
                / (bn.running_var.data()[j] + bn.eps).sqrt()
                + bn.beta.data()[j];
            assert!((out - direct).abs() <= 1e-12 * direct.abs().max(1.0), "{out} vs {direct}");
        }
    }
}

fn fixture() -> (Dataset, Network) {
    let data = Dataset::blobs(42, 4000, 4, 1.0).unwrap();
    let net = Network::mlp(&mut Rng::new(7), &[2, 32, 32, 4], Some(BnMode::Traditional)).unwrap();
    (data, net)
}

fn cfg(lr: f64, momentum: f64, batch: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        momentum,
        epochs: 10,
        batch_size: batch,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn desk_scale_training() {
    let (data, mut fp) = fixture();
    let trace = train(&mut fp, &data, &cfg(0.05, 0.9, 32)).unwrap();
    let fp_acc = *trace.accuracy.last().unwrap();
    assert!(fp_acc >= 0.95, "float accuracy {fp_acc}");

    for (q, slack) in [(QuantizerConfig::free(4), 0.05), (QuantizerConfig::pow2(4), 0.07)] {
        let mut net = fp.clone();
        net.quantize_all(&q).unwrap();
        let t = train(&mut net, &data, &cfg(0.01, 0.9, 32)).unwrap();
        let acc = *t.accuracy.last().unwrap();
        assert!(acc >= fp_acc - slack, "{q:?}: {acc} vs float {fp_acc}");
    }

    let (_, mut bin) = fixture();
    bin.quantize_all(&QuantizerConfig::binary()).unwrap();
    let t = train(&mut bin, &data, &cfg(0.003, 0.0, 100)).unwrap();
    assert_eq!(t.loss.len(), 10);
    assert!(t.loss.windows(2).all(|w| w[1] < w[0]), "binary loss {:?}", t.loss);
}

#[test]
fn training_is_deterministic() {
    let data = Dataset::blobs(1, 400, 4, 1.0).unwrap();
    let run = || {
        let mut net = Network::mlp(&mut Rng::new(2), &[2, 8, 4], None).unwrap();
        net.quantize_all(&QuantizerConfig::free(4)).unwrap();
        let mut c = cfg(0.05, 0.9, 16);
        c.epochs = 3;
        let t = train(&mut net, &data, &c).unwrap();
        (t, net)
    };
    assert_eq!(run(), run());
}

#[test]
fn q_changes_only_at_refresh() {
    let data = Dataset::blobs(1, 64, 4, 1.0).unwrap();
    let mut net = Network::mlp(&mut Rng::new(2), &[2, 8, 4], None).unwrap();
    net.quantize_all(&QuantizerConfig::free(4)).unwrap();
    net.refresh_quantization(1).unwrap();
    let before = net.predict(&data.x).unwrap();
    for layer in &mut net.layers {
        if let Layer::Affine(l) = layer {
            l.w_full = l.w_full.scale(1.7).unwrap();
        }
    }
    assert_eq!(net.predict(&data.x).unwrap(), before);
    net.refresh_quantization(1).unwrap();
    assert_ne!(net.predict(&data.x).unwrap(), before);
}
