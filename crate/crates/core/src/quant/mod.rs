//! Weight quantizers: the LUT k-means solver and its constrained variants,
//! power-of-two rounding, and the fixed-point / fixed pow-2 quantizers.

pub mod dictionary;
pub mod fixed;
pub mod kmeans;
pub mod lutq;
pub mod pow2;

pub use dictionary::{lookup, quantization_error, AssignmentTensor, Constraint, Dictionary, QuantizedWeight};
pub use fixed::{quantize_fp, uniform_grid};
pub use kmeans::{kmeans_converge, kmeans_init, kmeans_prune, kmeans_prune_with, kmeans_step, kmeans_step_fixed, pruned_count};
pub use lutq::{lutq_quantize, uniform_delta, QuantScheme, QuantizerConfig};
pub use pow2::{dynamic_range, is_pow2, quantize_pow2_fixed, round_pow2, split_pow2};
