//! Affine inference kernels with operation counters.
//!
//! - [`naive_affine`]: one multiply-accumulate per weight.
//! - [`grouped_affine`]: inputs are first summed per dictionary entry, then
//!   each group sum is multiplied once, so a row costs `K` multiplications.
//! - [`grouped_affine_fixed`] / [`shift_affine`]: the same grouping on
//!   fixed-point inputs, with the per-group product done either by an
//!   integer multiply or by sign-apply plus arithmetic shift.
//!
//! When the first dictionary entry is exactly zero (pruned dictionaries) its
//! group is skipped entirely.

mod fixed;

pub use fixed::{grouped_affine_fixed, shift_affine, FixedTensor, Overflow};

use crate::error::{LutqError, Result};
use crate::quant::QuantizedWeight;
use crate::tensor::Tensor;

/// Executed arithmetic operations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub mults: u64,
    pub adds: u64,
    pub shifts: u64,
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.mults += o.mults;
        self.adds += o.adds;
        self.shifts += o.shifts;
    }
}

pub(crate) fn check_affine(shape: &[usize], x_len: usize, bias_len: usize) -> Result<(usize, usize)> {
    if shape.len() != 2 || shape[1] != x_len || shape[0] != bias_len {
        return Err(LutqError::Dimension(format!(
            "weight {shape:?} with input of {x_len} and bias of {bias_len}"
        )));
    }
    Ok((shape[0], shape[1]))
}

/// `y = W·x + b`, one multiplication and one addition per weight.
pub fn naive_affine(w: &Tensor, x: &Tensor, bias: &Tensor) -> Result<(Tensor, OpCounts)> {
    let (o, i) = check_affine(w.shape(), x.len(), bias.len())?;
    let mut out = Vec::with_capacity(o);
    for r in 0..o {
        let mut acc = 0.0;
        for (wv, xv) in w.row(r).iter().zip(x.data()) {
            acc += wv * xv;
        }
        out.push(acc + bias.data()[r]);
    }
    let n = (o * i) as u64;
    Ok((
        Tensor::new(vec![o], out)?,
        OpCounts {
            mults: n,
            adds: n,
            shifts: 0,
        },
    ))
}

/// Whether group 0 is skipped: the dictionary starts with an exact zero.
pub(crate) fn skips_first(qw: &QuantizedWeight) -> bool {
    qw.dict().values().first() == Some(&0.0) && qw.dict().len() > 0
}

/// `y_o = b_o + Σ_k d_k · Σ_{i: A_oi = k} x_i`.
///
/// Exactly `K` multiplications per row (`K − 1` when entry 0 is a pruned
/// zero), independent of the row length.
pub fn grouped_affine(qw: &QuantizedWeight, x: &Tensor, bias: &Tensor) -> Result<(Tensor, OpCounts)> {
    let (o, i) = check_affine(qw.assign().shape(), x.len(), bias.len())?;
    let d = qw.dict().values();
    let k = d.len();
    let skip = skips_first(qw);
    let first = usize::from(skip);
    let idx = qw.assign().indices();
    let mut counts = OpCounts::default();
    let mut sums = vec![0.0; k];
    let mut out = Vec::with_capacity(o);
    for r in 0..o {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (&a, &xv) in idx[r * i..(r + 1) * i].iter().zip(x.data()) {
            let a = a as usize;
            if a < first {
                continue;
            }
            sums[a] += xv;
            counts.adds += 1;
        }
        let mut acc = 0.0;
        for j in first..k {
            acc += d[j] * sums[j];
            counts.mults += 1;
            counts.adds += 1;
        }
        out.push(acc + bias.data()[r]);
    }
    Ok((Tensor::new(vec![o], out)?, counts))
}
