//! Stochastic gradient descent on the full-precision parameters.

use super::network::{Gradients, Network};
use crate::error::{LutqError, Result};
use crate::tensor::Tensor;

/// SGD with classical momentum: `v ← μ·v + g`, `w ← w − η·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<Tensor>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(LutqError::Argument(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(LutqError::Argument(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    /// Updates every trainable tensor. Quantized layers only move `w_full`;
    /// their `Q` changes at the next k-means refresh.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.params.len() != net.layers.len() {
            return Err(LutqError::Dimension(format!(
                "{} gradient groups for {} layers",
                grads.params.len(),
                net.layers.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = net
                .layers
                .iter()
                .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect();
        }
        for ((layer, g), v) in net.layers.iter_mut().zip(&grads.params).zip(&mut self.velocity) {
            let params = layer.params_mut();
            if params.len() != g.len() {
                return Err(LutqError::Dimension("gradient count mismatch".into()));
            }
            for ((p, g), v) in params.into_iter().zip(g).zip(v.iter_mut()) {
                *v = v.scale(self.momentum)?.add(g)?;
                *p = p.sub(&v.scale(self.lr)?)?;
            }
        }
        Ok(())
    }
}

/// One plain SGD step without momentum state.
pub fn sgd_step(net: &mut Network, grads: &Gradients, lr: f64) -> Result<()> {
    Sgd::new(lr, 0.0)?.step(net, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Activation, AffineLayer, Layer};

    fn scalar_net(w: f64) -> Network {
        let l = AffineLayer::new(
            Tensor::new(vec![1, 1], vec![w]).unwrap(),
            Tensor::zeros(&[1]),
            Activation::Identity,
        )
        .unwrap();
        Network::new(vec![Layer::Affine(l)])
    }

    fn grads(g: f64) -> Gradients {
        Gradients {
            params: vec![vec![
                Tensor::new(vec![1, 1], vec![g]).unwrap(),
                Tensor::zeros(&[1]),
            ]],
            input: Tensor::zeros(&[1, 1]),
        }
    }

    fn weight(net: &Network) -> f64 {
        net.layers[0].params()[0].data()[0]
    }

    #[test]
    fn single_step() {
        let mut net = scalar_net(1.0);
        sgd_step(&mut net, &grads(2.0), 0.1).unwrap();
        assert_eq!(weight(&net), 0.8);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut net = scalar_net(1.0);
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        opt.step(&mut net, &grads(0.0)).unwrap();
        assert_eq!(weight(&net), 1.0);
    }

    #[test]
    fn momentum_accumulates() {
        let mut net = scalar_net(0.0);
        let mut opt = Sgd::new(1.0, 0.5).unwrap();
        opt.step(&mut net, &grads(1.0)).unwrap();
        opt.step(&mut net, &grads(1.0)).unwrap();
        assert_eq!(weight(&net), -2.5);
    }
}
