//! The training loop: k-means refresh, quantized forward, straight-through
//! backward and SGD on the full-precision accumulators.

use super::data::Dataset;
use super::loss::{accuracy, cross_entropy, softmax_cross_entropy};
use super::network::Network;
use super::optim::Sgd;
use crate::error::{LutqError, Result};
use crate::tensor::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Minibatches between k-means refreshes.
    pub kmeans_interval: usize,
    /// k-means steps per refresh.
    pub kmeans_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 10,
            batch_size: 32,
            kmeans_interval: 1,
            kmeans_steps: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(LutqError::Argument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(LutqError::Argument("batch_size must be >= 1".into()));
        }
        if self.kmeans_interval == 0 {
            return Err(LutqError::Argument("kmeans_interval must be >= 1".into()));
        }
        if self.kmeans_steps == 0 {
            return Err(LutqError::Argument("kmeans_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch mean training loss and end-of-epoch accuracy on the training set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

/// Trains `net` in place.
///
/// Samples are reshuffled every epoch from the seeded stream. Every
/// `kmeans_interval` minibatches the quantized layers are refreshed before
/// the forward pass. Uncalibrated activation ranges are set from the first
/// minibatch.
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let mut trace = TrainTrace::default();
    if cfg.epochs == 0 {
        return Ok(trace);
    }
    if data.is_empty() {
        return Err(LutqError::Argument("empty dataset".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let probs = net.outputs_probabilities();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = data.batch(chunk)?;
            if step % cfg.kmeans_interval == 0 {
                net.refresh_quantization(cfg.kmeans_steps)?;
            }
            if net.needs_calibration() {
                net.calibrate_activations(&x)?;
            }
            let (out, cache) = net.forward(&x, true)?;
            let (loss, grad) = if probs {
                cross_entropy(&out, &labels)?
            } else {
                softmax_cross_entropy(&out, &labels)?
            };
            let grads = net.backward_ste(&grad, &cache)?;
            net.update_running_stats(&cache)?;
            opt.step(net, &grads)?;
            loss_sum += loss * chunk.len() as f64;
            step += 1;
        }
        trace.loss.push(loss_sum / data.len() as f64);
        trace.accuracy.push(evaluate(net, data)?);
    }
    Ok(trace)
}

/// Inference-mode accuracy over a whole dataset.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    accuracy(&net.predict(&data.x)?, &data.labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epochs_leave_net_unchanged() {
        let mut rng = Rng::new(0);
        let mut net = Network::mlp(&mut rng, &[2, 4, 2], None).unwrap();
        let before = net.clone();
        let data = Dataset::blobs(0, 20, 2, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let trace = train(&mut net, &data, &cfg).unwrap();
        assert!(trace.loss.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn same_seed_same_trace() {
        let data = Dataset::blobs(1, 200, 2, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut net = Network::mlp(&mut Rng::new(5), &[2, 8, 2], None).unwrap();
            net.quantize_all(&crate::quant::QuantizerConfig::free(4)).unwrap();
            let t = train(&mut net, &data, &cfg).unwrap();
            (t, net)
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a, b);
        assert_eq!(na, nb);
    }

    #[test]
    fn rejects_zero_interval() {
        let cfg = TrainConfig {
            kmeans_interval: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
