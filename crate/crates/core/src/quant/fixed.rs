//! Uniform fixed-point quantization with a power-of-two step.

use super::pow2::is_pow2;
use crate::error::{LutqError, Result};

/// Largest code magnitude of a signed `n_bits` fixed-point number.
pub fn fp_max_code(n_bits: u32) -> i64 {
    (1i64 << (n_bits - 1).min(62)) - 1
}

fn check_fp_args(n_bits: u32, delta: f64) -> Result<()> {
    if n_bits < 2 {
        return Err(LutqError::Argument(format!(
            "fixed-point quantizer needs at least 2 bits, got {n_bits}"
        )));
    }
    if !is_pow2(delta) || delta < 0.0 {
        return Err(LutqError::Argument(format!(
            "step size must be a positive power of two, got {delta}"
        )));
    }
    Ok(())
}

/// Rounds `w` to the nearest multiple of `delta` (half away from zero) and
/// saturates at `(2^(n-1) - 1) · delta`.
pub fn quantize_fp(w: f64, n_bits: u32, delta: f64) -> Result<f64> {
    check_fp_args(n_bits, delta)?;
    if !w.is_finite() {
        return Err(LutqError::NonFinite("quantize_fp"));
    }
    if w == 0.0 {
        return Ok(0.0);
    }
    let max_code = fp_max_code(n_bits) as f64;
    let scaled = w.abs() / delta;
    let code = if scaled <= max_code {
        (scaled + 0.5).floor()
    } else {
        max_code
    };
    Ok(w.signum() * delta * code)
}

/// The symmetric grid `{k · delta : |k| ≤ 2^(n-1) - 1}` in ascending order.
pub fn uniform_grid(n_bits: u32, delta: f64) -> Result<Vec<f64>> {
    check_fp_args(n_bits, delta)?;
    if n_bits > 16 {
        return Err(LutqError::Argument(format!(
            "uniform dictionary of {n_bits} bits is too large"
        )));
    }
    let max_code = fp_max_code(n_bits);
    Ok((-max_code..=max_code).map(|k| k as f64 * delta).collect())
}
