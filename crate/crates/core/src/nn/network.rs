//! Sequential networks: forward with quantized weights, straight-through
//! backward, k-means refresh and activation-range calibration.

use super::layers::{Activation, AffineLayer, BatchNormLayer, BnMode, Layer, LayerCache, LayerQuant};
use crate::error::{LutqError, Result};
use crate::quant::QuantizerConfig;
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Per-layer intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cache {
    pub layers: Vec<LayerCache>,
}

/// Parameter gradients in [`Layer::params`] order, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<Vec<Tensor>>,
    pub input: Tensor,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Multi-layer perceptron over `sizes = [in, h1, ..., out]`: ReLU hidden
    /// layers, identity output. With `batch_norm`, each hidden affine layer is
    /// followed by batch normalization and a separate ReLU.
    pub fn mlp(rng: &mut Rng, sizes: &[usize], batch_norm: Option<BnMode>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(LutqError::Argument("an MLP needs at least input and output sizes".into()));
        }
        let mut layers = Vec::new();
        for (idx, pair) in sizes.windows(2).enumerate() {
            let last = idx + 2 == sizes.len();
            let act = match (last, batch_norm) {
                (true, _) | (false, Some(_)) => Activation::Identity,
                (false, None) => Activation::ReLU,
            };
            layers.push(Layer::Affine(AffineLayer::init(rng, pair[0], pair[1], act)?));
            if let (false, Some(mode)) = (last, batch_norm) {
                layers.push(Layer::BatchNorm(BatchNormLayer::new(pair[1], 1e-5, mode)?));
                layers.push(Layer::Activation(super::layers::PostOp::new(Activation::ReLU)));
            }
        }
        Ok(Self { layers })
    }

    /// Attaches `cfg` to every affine and conv layer, dropping any state.
    pub fn quantize_all(&mut self, cfg: &QuantizerConfig) -> Result<()> {
        cfg.validate()?;
        for layer in &mut self.layers {
            if let Some((_, slot)) = layer.weight_slot() {
                *slot = Some(LayerQuant::new(cfg.clone()));
            }
        }
        Ok(())
    }

    /// Runs `steps` k-means steps on every quantized layer from its current
    /// full-precision weights.
    pub fn refresh_quantization(&mut self, steps: usize) -> Result<()> {
        for layer in &mut self.layers {
            if let Some((w, Some(q))) = layer.weight_slot() {
                q.refresh(w, steps)?;
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<(Tensor, Cache)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(&h, training)?;
            caches.push(cache);
            h = out;
        }
        Ok((h, Cache { layers: caches }))
    }

    /// Inference-mode output.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, false)?.0)
    }

    /// Backpropagates `loss_grad` (gradient w.r.t. the network output).
    ///
    /// Quantized layers are differentiated as if `Q` were the weight, and that
    /// gradient is returned for `w_full` unchanged.
    pub fn backward_ste(&self, loss_grad: &Tensor, cache: &Cache) -> Result<Gradients> {
        if cache.layers.len() != self.layers.len() {
            return Err(LutqError::State(format!(
                "cache holds {} layers, network has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        let mut g = loss_grad.clone();
        let mut params = vec![Vec::new(); self.layers.len()];
        for (idx, (layer, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let (gx, gp) = layer.backward(&g, c)?;
            params[idx] = gp;
            g = gx;
        }
        Ok(Gradients { params, input: g })
    }

    /// Folds the batch statistics of a training-mode forward into the
    /// running averages.
    pub fn update_running_stats(&mut self, cache: &Cache) -> Result<()> {
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers) {
            if let (
                Layer::BatchNorm(bn),
                LayerCache::BatchNorm {
                    batch_mean,
                    batch_var,
                    training: true,
                    ..
                },
            ) = (layer, c)
            {
                bn.update_running(batch_mean, batch_var)?;
            }
        }
        Ok(())
    }

    /// Sets every uncalibrated activation range to `2^⌈log₂ max⌉` of the
    /// float activations observed on `x`, then freezes it.
    pub fn calibrate_activations(&mut self, x: &Tensor) -> Result<()> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            let pending = layer
                .post_mut()
                .and_then(|p| p.act_quant.as_mut())
                .filter(|q| q.range_r.is_none())
                .map(|q| q.clone());
            if let Some(qcfg) = pending {
                let saved = layer.post_mut().and_then(|p| p.act_quant.take());
                let (raw, _) = layer.forward(&h, false)?;
                let max = raw.max_abs();
                let r = if max > 0.0 {
                    crate::quant::dynamic_range(&raw)?
                } else {
                    1.0
                };
                let post = layer.post_mut().expect("pending implies a post op");
                post.act_quant = saved.map(|_| qcfg.with_range(r));
            }
            h = layer.forward(&h, false)?.0;
        }
        Ok(())
    }

    pub fn needs_calibration(&self) -> bool {
        self.layers.iter().any(|l| {
            let post = match l {
                Layer::Affine(a) => Some(&a.post),
                Layer::Conv2D(c) => Some(&c.post),
                Layer::Activation(p) => Some(p),
                Layer::BatchNorm(_) => None,
            };
            post.and_then(|p| p.act_quant.as_ref())
                .is_some_and(|q| q.range_r.is_none())
        })
    }

    /// True when the last layer ends in a softmax.
    pub fn outputs_probabilities(&self) -> bool {
        match self.layers.last() {
            Some(Layer::Affine(a)) => a.post.activation == Activation::Softmax,
            Some(Layer::Conv2D(c)) => c.post.activation == Activation::Softmax,
            Some(Layer::Activation(p)) => p.activation == Activation::Softmax,
            _ => false,
        }
    }
}

/// Free-function form of [`Network::forward`].
pub fn forward(net: &Network, x: &Tensor, training: bool) -> Result<(Tensor, Cache)> {
    net.forward(x, training)
}

/// Free-function form of [`Network::backward_ste`].
pub fn backward_ste(net: &Network, loss_grad: &Tensor, cache: &Cache) -> Result<Gradients> {
    net.backward_ste(loss_grad, cache)
}
