//! Fixed-point evaluation shared by the integer-multiply and shift kernels.
//!
//! A [`FixedTensor`] holds 32-bit integer mantissas with one shared binary
//! exponent. Group sums and products are formed in 128-bit integers. Every
//! scaling by a negative power of two is an arithmetic right shift, i.e.
//! rounding toward negative infinity, so both kernels produce identical
//! bits. Only the final narrowing to 32 bits honours the [`Overflow`] mode.

use super::{check_affine, skips_first, OpCounts};
use crate::error::{LutqError, Result};
use crate::quant::pow2::{exp2i, split_pow2};
use crate::quant::QuantizedWeight;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Overflow {
    /// Clamp to the 32-bit range.
    #[default]
    Saturate,
    /// Report an overflow error.
    Error,
}

impl Overflow {
    fn narrow(self, v: i128) -> Result<i32> {
        match i32::try_from(v) {
            Ok(m) => Ok(m),
            Err(_) => match self {
                Overflow::Saturate => Ok(if v < 0 { i32::MIN } else { i32::MAX }),
                Overflow::Error => Err(LutqError::Overflow(format!("{v} exceeds a 32-bit mantissa"))),
            },
        }
    }
}

/// Values `mantissa · 2^exponent`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    shape: Vec<usize>,
    mantissas: Vec<i32>,
    exponent: i32,
}

impl FixedTensor {
    pub fn new(shape: Vec<usize>, mantissas: Vec<i32>, exponent: i32) -> Result<Self> {
        if shape.is_empty() || shape.iter().product::<usize>() != mantissas.len() {
            return Err(LutqError::Dimension(format!(
                "fixed tensor shape {shape:?} with {} mantissas",
                mantissas.len()
            )));
        }
        Ok(Self {
            shape,
            mantissas,
            exponent,
        })
    }

    /// Integers with exponent 0.
    pub fn from_ints(values: Vec<i32>) -> Self {
        Self {
            shape: vec![values.len()],
            mantissas: values,
            exponent: 0,
        }
    }

    /// Rounds `t` to the nearest multiple of `2^exponent` (halves up).
    pub fn from_tensor(t: &Tensor, exponent: i32, mode: Overflow) -> Result<Self> {
        let scale = exp2i(-exponent);
        if scale == 0.0 || !scale.is_finite() {
            return Err(LutqError::Argument(format!("exponent {exponent} out of range")));
        }
        let mantissas = t
            .data()
            .iter()
            .map(|&v| {
                let m = (v * scale + 0.5).floor();
                if !m.is_finite() || m.abs() >= 2f64.powi(100) {
                    return mode.narrow(if m < 0.0 { i128::MIN } else { i128::MAX });
                }
                mode.narrow(m as i128)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(t.shape().to_vec(), mantissas, exponent)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn mantissas(&self) -> &[i32] {
        &self.mantissas
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    pub fn len(&self) -> usize {
        self.mantissas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mantissas.is_empty()
    }

    /// Exact conversion back to reals.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let s = exp2i(self.exponent);
        Tensor::new(
            self.shape.clone(),
            self.mantissas.iter().map(|&m| m as f64 * s).collect(),
        )
    }
}

/// Largest magnitude allowed for an intermediate product or shift result.
const WIDE_LIMIT: i128 = 1 << 120;

fn wide_check(v: i128) -> Result<i128> {
    if v.abs() >= WIDE_LIMIT {
        return Err(LutqError::Overflow("intermediate exceeds the 128-bit accumulator".into()));
    }
    Ok(v)
}

/// Floor of `v · 2^-f` for `f ≥ 0`.
fn shr_floor(v: i128, f: u32) -> i128 {
    v >> f.min(127)
}

/// `v` as `(integer, e)` with `v = integer · 2^e` and an odd integer.
fn dyadic(v: f64) -> (i128, i32) {
    let (m, e) = split_pow2(v);
    let mant = (m * 2f64.powi(52)) as i128;
    let tz = mant.trailing_zeros() as i32;
    let odd = mant >> tz;
    let sign = if v < 0.0 { -1 } else { 1 };
    (sign * odd, e - 52 + tz)
}

struct Layout<'a> {
    o: usize,
    i: usize,
    first: usize,
    idx: &'a [u32],
}

fn prepare<'a>(qw: &'a QuantizedWeight, x: &FixedTensor, bias: &FixedTensor) -> Result<Layout<'a>> {
    let (o, i) = check_affine(qw.assign().shape(), x.len(), bias.len())?;
    if bias.exponent != x.exponent {
        return Err(LutqError::Argument(format!(
            "bias exponent {} differs from input exponent {}",
            bias.exponent, x.exponent
        )));
    }
    Ok(Layout {
        o,
        i,
        first: usize::from(skips_first(qw)),
        idx: qw.assign().indices(),
    })
}

/// Per-group integer input sums for one row.
fn group_sums(lay: &Layout, r: usize, x: &FixedTensor, k: usize, counts: &mut OpCounts) -> Vec<i128> {
    let mut sums = vec![0i128; k];
    for (&a, &m) in lay.idx[r * lay.i..(r + 1) * lay.i].iter().zip(&x.mantissas) {
        let a = a as usize;
        if a < lay.first {
            continue;
        }
        sums[a] += m as i128;
        counts.adds += 1;
    }
    sums
}

/// Grouped accumulation in fixed point with one integer multiplication per
/// group: each entry is scaled to an integer `D_k = d_k · 2^f`, multiplied
/// with the group sum, and shifted back by `f`.
pub fn grouped_affine_fixed(
    qw: &QuantizedWeight,
    x: &FixedTensor,
    bias: &FixedTensor,
    mode: Overflow,
) -> Result<(FixedTensor, OpCounts)> {
    let lay = prepare(qw, x, bias)?;
    let d = qw.dict().values();
    let parts: Vec<(i128, i32)> = d.iter().map(|&v| if v == 0.0 { (0, 0) } else { dyadic(v) }).collect();
    let f = parts.iter().map(|&(_, e)| (-e).max(0)).max().unwrap_or(0);
    if f > 96 {
        return Err(LutqError::Argument(format!(
            "dictionary needs {f} fraction bits; at most 96 are supported"
        )));
    }
    let scaled = parts
        .iter()
        .map(|&(odd, e)| {
            let s = (e + f) as u32;
            if s >= 100 {
                return Err(LutqError::Overflow(format!("dictionary entry needs a {s}-bit shift")));
            }
            wide_check(odd << s)
        })
        .collect::<Result<Vec<i128>>>()?;
    let mut counts = OpCounts::default();
    let mut out = Vec::with_capacity(lay.o);
    for r in 0..lay.o {
        let sums = group_sums(&lay, r, x, d.len(), &mut counts);
        let mut acc = bias.mantissas[r] as i128;
        for j in lay.first..d.len() {
            let prod = sums[j]
                .checked_mul(scaled[j])
                .ok_or_else(|| LutqError::Overflow("group product".into()))
                .and_then(wide_check)?;
            acc += shr_floor(prod, f as u32);
            counts.mults += 1;
            counts.adds += 1;
        }
        out.push(mode.narrow(acc)?);
    }
    Ok((FixedTensor::new(vec![lay.o], out, x.exponent)?, counts))
}

/// Grouped accumulation in which every dictionary multiply is replaced by
/// applying the entry's sign and an arithmetic shift by its exponent.
///
/// Bit-identical to [`grouped_affine_fixed`]; performs no multiplications.
pub fn shift_affine(
    qw: &QuantizedWeight,
    x: &FixedTensor,
    bias: &FixedTensor,
    mode: Overflow,
) -> Result<(FixedTensor, OpCounts)> {
    let lay = prepare(qw, x, bias)?;
    let d = qw.dict().values();
    let mut plan = Vec::with_capacity(d.len());
    for (j, &v) in d.iter().enumerate() {
        if j < lay.first {
            plan.push((false, 0));
            continue;
        }
        if !crate::quant::is_pow2(v) {
            return Err(LutqError::Contract(format!(
                "dictionary entry {v} is not a signed power of two"
            )));
        }
        plan.push((v < 0.0, split_pow2(v).1));
    }
    let mut counts = OpCounts::default();
    let mut out = Vec::with_capacity(lay.o);
    for r in 0..lay.o {
        let sums = group_sums(&lay, r, x, d.len(), &mut counts);
        let mut acc = bias.mantissas[r] as i128;
        for j in lay.first..d.len() {
            let (neg, b) = plan[j];
            let s = if neg { -sums[j] } else { sums[j] };
            let term = if b >= 0 {
                if b >= 100 {
                    return Err(LutqError::Overflow(format!("left shift by {b}")));
                }
                wide_check(s << b)?
            } else {
                shr_floor(s, (-b) as u32)
            };
            acc += term;
            counts.shifts += 1;
            counts.adds += 1;
        }
        out.push(mode.narrow(acc)?);
    }
    Ok((FixedTensor::new(vec![lay.o], out, x.exponent)?, counts))
}
