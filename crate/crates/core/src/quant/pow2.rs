//! Power-of-two rounding and the fixed-range quantizers.
//!
//! Every threshold is decided on the exact binary mantissa of the input
//! rather than through `log2`, so boundary cases such as `1.5 · 2^e` resolve
//! the same way on every platform.

use crate::error::{LutqError, Result};
use crate::tensor::Tensor;

/// Splits a finite non-zero magnitude into `(mantissa, exponent)` with
/// `mantissa ∈ [1, 2)` and `|v| = mantissa · 2^exponent`, exactly.
pub fn split_pow2(v: f64) -> (f64, i32) {
    debug_assert!(v.is_finite() && v != 0.0);
    let bits = v.abs().to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if raw_exp == 0 {
        // Subnormal: normalise by hand.
        let shift = frac.leading_zeros() as i32 - 11;
        let frac = (frac << shift) & ((1u64 << 52) - 1);
        let m = f64::from_bits((1023u64 << 52) | frac);
        (m, -1022 - shift)
    } else {
        let m = f64::from_bits((1023u64 << 52) | frac);
        (m, raw_exp - 1023)
    }
}

/// `2^e` for any integer exponent within the f64 range.
pub(crate) fn exp2i(e: i32) -> f64 {
    if e > 1023 {
        f64::INFINITY
    } else if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if e >= -1074 {
        f64::from_bits(1u64 << (e + 1074))
    } else {
        0.0
    }
}

/// True when `v` is exactly `±2^b` for an integer `b`.
pub fn is_pow2(v: f64) -> bool {
    v.is_finite() && v != 0.0 && split_pow2(v).0 == 1.0
}

/// Rounds a non-zero value to the nearest signed power of two, placing the
/// decision threshold at the arithmetic mean `1.5 · 2^⌊b⌋` of the two
/// neighbouring powers. Values exactly on the threshold round down.
pub fn round_pow2(v: f64) -> Result<f64> {
    if v == 0.0 || !v.is_finite() {
        return Err(LutqError::Argument(format!(
            "round_pow2 needs a finite non-zero value, got {v}"
        )));
    }
    let (m, e) = split_pow2(v);
    let e = if m <= 1.5 { e } else { e + 1 };
    let out = v.signum() * exp2i(e);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(LutqError::NonFinite("round_pow2"))
    }
}

/// Per-tensor dynamic range `r = 2^⌈log₂ max|w|⌉`.
pub fn dynamic_range(w: &Tensor) -> Result<f64> {
    let max = w.max_abs();
    if max == 0.0 {
        return Err(LutqError::Argument(
            "dynamic range of an empty or all-zero tensor".into(),
        ));
    }
    let (m, e) = split_pow2(max);
    Ok(if m == 1.0 { exp2i(e) } else { exp2i(e + 1) })
}

/// Power-of-two quantizer with `n_bits` (one sign bit) and range `2^m`.
///
/// Magnitudes at or below `2^(m - 2^(n-2) + 0.5)` map to zero, magnitudes
/// above `2^m` saturate, everything else rounds its exponent half-up in the
/// log domain.
pub fn quantize_pow2_fixed(w: f64, n_bits: u32, m: i32) -> Result<f64> {
    if n_bits < 2 {
        return Err(LutqError::Argument(format!(
            "pow-2 quantizer needs at least 2 bits, got {n_bits}"
        )));
    }
    if !w.is_finite() {
        return Err(LutqError::NonFinite("quantize_pow2_fixed"));
    }
    if w == 0.0 {
        return Ok(0.0);
    }
    let (mant, e) = split_pow2(w);
    // The zero threshold sits at 2^t · √2 with t integer; √2 is irrational so
    // equality never occurs and `mant < √2` decides the boundary octave.
    // f64 SQRT_2 lies just above √2, so `mant >= SQRT_2` is exactly `mant > √2`.
    let levels = 1i64 << (n_bits - 2).min(62);
    let t = m as i64 - levels;
    let upper = mant >= std::f64::consts::SQRT_2;
    let e = e as i64;
    if e < t || (e == t && !upper) {
        return Ok(0.0);
    }
    if e > m as i64 || (e == m as i64 && mant > 1.0) {
        return Ok(w.signum() * exp2i(m));
    }
    let rounded = if upper { e + 1 } else { e };
    Ok(w.signum() * exp2i(rounded as i32))
}
