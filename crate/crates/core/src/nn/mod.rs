//! Desk-scale networks trained with look-up table quantized weights.
//!
//! Quantized layers keep a full-precision accumulator `w_full` which the
//! optimizer updates, and a dictionary/assignment pair refreshed from it by
//! k-means. The forward pass reads only the quantized weights; the backward
//! pass treats the quantizer as the identity.

pub mod data;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod train;

pub use data::Dataset;
pub use layers::{
    bn_fold_scale, ActQuantConfig, ActScheme, Activation, AffineLayer, BatchNormLayer, BnMode,
    Conv2DLayer, Layer, LayerCache, LayerQuant, PostOp,
};
pub use loss::{accuracy, argmax, cross_entropy, softmax_cross_entropy, squared_error};
pub use network::{backward_ste, forward, Cache, Gradients, Network};
pub use optim::{sgd_step, Sgd};
pub use train::{evaluate, train, TrainConfig, TrainTrace};
