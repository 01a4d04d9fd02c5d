//! Look-up table quantization of neural network weights.
//!
//! Each quantized layer stores a small dictionary of values and an
//! assignment tensor indexing into it. The crate provides:
//!
//! - [`tensor`]: dense `f64` tensors and a seeded random stream
//! - [`quant`]: the k-means dictionary solver with free, power-of-two,
//!   pruned, fixed and uniform variants, plus the fixed-range quantizers
//! - [`nn`]: a small network stack trained with straight-through gradients
//!   and full-precision weight accumulators
//! - [`inference`]: grouped-accumulation and shift-only affine kernels with
//!   operation counters
//! - [`footprint`]: parameter/buffer memory and operation accounting

pub mod error;
pub mod footprint;
pub mod inference;
pub mod nn;
pub mod quant;
pub mod tensor;

pub use error::{LutqError, Result};
pub use tensor::{rng_uniform, tensor_matmul, Rng, Tensor};
