//! One-dimensional k-means over the entries of a weight tensor.
//!
//! The assignment pass picks the nearest dictionary entry (lowest index on
//! ties); the centroid pass replaces each entry by the mean of its members,
//! leaving entries with no members untouched. Constraint post-processing
//! (power-of-two rounding, zero pinning) is applied after the centroid pass.

use std::cmp::Ordering;

use super::dictionary::{AssignmentTensor, Constraint, Dictionary};
use super::pow2::round_pow2;
use crate::error::{LutqError, Result};
use crate::tensor::Tensor;

/// Iteration cap for clustering to convergence.
pub const MAX_INIT_ITERATIONS: usize = 100;

fn nearest(v: f64, values: &[f64], offset: usize) -> u32 {
    let mut best = offset;
    let mut best_dist = (v - values[offset]).abs();
    for (k, &d) in values.iter().enumerate().skip(offset + 1) {
        let dist = (v - d).abs();
        if dist < best_dist {
            best = k;
            best_dist = dist;
        }
    }
    best as u32
}

/// Number of weights pinned to zero for ratio `p` over `n` weights: `⌈p·n⌉`.
///
/// A relative slack of a few ulps keeps decimal ratios such as `0.3` from
/// rounding `p·n` just above an integer.
pub fn pruned_count(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let slack = x.abs() * 4.0 * f64::EPSILON;
    ((x - slack).ceil().max(0.0) as usize).min(n)
}

/// Positions of the `count` smallest-magnitude weights, ties broken by
/// position. Returns a mask.
fn smallest_magnitudes(w: &[f64], count: usize) -> Vec<bool> {
    let mut mask = vec![false; w.len()];
    if count == 0 {
        return mask;
    }
    let mut order: Vec<usize> = (0..w.len()).collect();
    let cmp = |a: &usize, b: &usize| -> Ordering {
        w[*a].abs().total_cmp(&w[*b].abs()).then(a.cmp(b))
    };
    if count < w.len() {
        order.select_nth_unstable_by(count - 1, cmp);
    }
    for &i in &order[..count] {
        mask[i] = true;
    }
    mask
}

/// Mean of members per entry, entries `offset..K` only. Entries with no
/// members keep their previous value.
///
/// The mean is accumulated relative to each cluster's first member, so a
/// cluster of identical values reproduces that value exactly.
fn centroid_pass(w: &[f64], indices: &[u32], values: &mut [f64], offset: usize) {
    let k = values.len();
    let mut first: Vec<Option<f64>> = vec![None; k];
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&x, &i) in w.iter().zip(indices) {
        let i = i as usize;
        if i >= offset {
            let base = *first[i].get_or_insert(x);
            sums[i] += x - base;
            counts[i] += 1;
        }
    }
    for j in offset..k {
        if let Some(base) = first[j] {
            values[j] = base + sums[j] / counts[j] as f64;
        }
    }
}

fn round_entries(values: &mut [f64], offset: usize) -> Result<()> {
    for v in &mut values[offset..] {
        *v = round_pow2(*v).map_err(|_| {
            LutqError::Contract("centroid collapsed to zero under power-of-two constraint".into())
        })?;
    }
    Ok(())
}

/// One assignment pass followed by one centroid pass.
///
/// Accepts `Free`, `PowerOfTwo` and `ZeroPinnedFirst` dictionaries. For the
/// zero-pinned case the pruned set is re-selected from the current
/// magnitudes on every call. The incoming assignment only fixes the shape.
pub fn kmeans_step(
    w: &Tensor,
    dict: &Dictionary,
    assign: &AssignmentTensor,
) -> Result<(Dictionary, AssignmentTensor)> {
    if w.shape() != assign.shape() {
        return Err(LutqError::Dimension(format!(
            "weights {:?} vs assignments {:?}",
            w.shape(),
            assign.shape()
        )));
    }
    let n = w.len();
    let k = dict.len();
    let mut values = dict.values().to_vec();
    let indices = match dict.constraint() {
        Constraint::Free | Constraint::PowerOfTwo => {
            if k > n {
                return Err(LutqError::Argument(format!(
                    "dictionary of {k} entries for {n} weights"
                )));
            }
            let indices: Vec<u32> = w.data().iter().map(|&x| nearest(x, &values, 0)).collect();
            centroid_pass(w.data(), &indices, &mut values, 0);
            if dict.constraint().rounds_to_pow2() {
                round_entries(&mut values, 0)?;
            }
            indices
        }
        Constraint::ZeroPinnedFirst { pruning_ratio, .. } => {
            let zeros = pruned_count(pruning_ratio, n);
            check_survivors(n, zeros, k)?;
            let mask = smallest_magnitudes(w.data(), zeros);
            let indices: Vec<u32> = w
                .data()
                .iter()
                .zip(&mask)
                .map(|(&x, &pruned)| if pruned { 0 } else { nearest(x, &values, 1) })
                .collect();
            centroid_pass(w.data(), &indices, &mut values, 1);
            values[0] = 0.0;
            if dict.constraint().rounds_to_pow2() {
                round_entries(&mut values, 1)?;
            }
            indices
        }
        Constraint::Fixed | Constraint::UniformFixedPoint { .. } => {
            return Err(LutqError::Argument(
                "fixed dictionaries are not updated; use kmeans_step_fixed".into(),
            ))
        }
    };
    Ok((
        Dictionary::from_parts(values, dict.constraint()),
        AssignmentTensor::new(w.shape().to_vec(), indices)?,
    ))
}

fn check_survivors(n: usize, zeros: usize, k: usize) -> Result<()> {
    if n - zeros < k - 1 {
        return Err(LutqError::Argument(format!(
            "pruning leaves {} weights for {} non-zero entries",
            n - zeros,
            k - 1
        )));
    }
    Ok(())
}

/// Nearest-entry assignment against a dictionary that is never updated.
pub fn kmeans_step_fixed(w: &Tensor, dict: &Dictionary) -> Result<AssignmentTensor> {
    if dict.is_empty() {
        return Err(LutqError::Argument("empty dictionary".into()));
    }
    let indices = w.data().iter().map(|&x| nearest(x, dict.values(), 0)).collect();
    AssignmentTensor::new(w.shape().to_vec(), indices)
}

/// `k` points evenly spaced over `[lo, hi]`; a single point sits mid-range.
fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo + 0.5 * (hi - lo)];
    }
    (0..k)
        .map(|j| lo + (hi - lo) * j as f64 / (k - 1) as f64)
        .collect()
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Iterates [`kmeans_step`] until an assignment pass changes nothing, or
/// for [`MAX_INIT_ITERATIONS`] steps.
pub fn kmeans_converge(
    w: &Tensor,
    mut dict: Dictionary,
    mut assign: AssignmentTensor,
) -> Result<(Dictionary, AssignmentTensor)> {
    let mut previous: Option<AssignmentTensor> = None;
    for _ in 0..MAX_INIT_ITERATIONS {
        let (d, a) = kmeans_step(w, &dict, &assign)?;
        let settled = previous.as_ref() == Some(&a);
        previous = Some(a.clone());
        dict = d;
        assign = a;
        if settled {
            break;
        }
    }
    Ok((dict, assign))
}

/// Standard initialization for a trainable dictionary of `k` entries:
/// centroids evenly spaced over `[min w, max w]`, then k-means to
/// convergence. Zero-pinned constraints go through [`kmeans_prune_with`].
pub fn kmeans_init(w: &Tensor, k: usize, constraint: Constraint) -> Result<(Dictionary, AssignmentTensor)> {
    match constraint {
        Constraint::Free | Constraint::PowerOfTwo => {
            if k == 0 || k > w.len() {
                return Err(LutqError::Argument(format!(
                    "dictionary of {k} entries for {} weights",
                    w.len()
                )));
            }
            let (lo, hi) = min_max(w.data().iter().copied());
            let dict = Dictionary::from_parts(linspace(lo, hi, k), constraint);
            let assign = AssignmentTensor::filled(w.shape(), 0);
            kmeans_converge(w, dict, assign)
        }
        Constraint::ZeroPinnedFirst { pruning_ratio, pow2 } => {
            kmeans_prune_with(w, k, pruning_ratio, pow2)
        }
        Constraint::Fixed | Constraint::UniformFixedPoint { .. } => Err(LutqError::Argument(
            "fixed dictionaries carry their own values".into(),
        )),
    }
}

/// Pruned clustering: the `⌈p·N⌉` smallest-magnitude weights go to the zero
/// entry and the rest are clustered over the remaining `k - 1` entries.
pub fn kmeans_prune(w: &Tensor, k: usize, p: f64) -> Result<(Dictionary, AssignmentTensor)> {
    kmeans_prune_with(w, k, p, false)
}

/// [`kmeans_prune`] with optional power-of-two rounding of the non-zero
/// entries.
pub fn kmeans_prune_with(
    w: &Tensor,
    k: usize,
    p: f64,
    pow2: bool,
) -> Result<(Dictionary, AssignmentTensor)> {
    if !(0.0..1.0).contains(&p) {
        return Err(LutqError::Argument(format!(
            "pruning ratio must lie in [0, 1), got {p}"
        )));
    }
    if k < 2 {
        return Err(LutqError::Argument(format!(
            "pruning needs K >= 2, got {k}"
        )));
    }
    let n = w.len();
    let zeros = pruned_count(p, n);
    check_survivors(n, zeros, k)?;
    let mask = smallest_magnitudes(w.data(), zeros);
    let survivors = w
        .data()
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| !m)
        .map(|(&x, _)| x);
    let (lo, hi) = min_max(survivors);
    let mut values = vec![0.0];
    values.extend(linspace(lo, hi, k - 1));
    let constraint = Constraint::ZeroPinnedFirst {
        pruning_ratio: p,
        pow2,
    };
    let dict = Dictionary::from_parts(values, constraint);
    let assign = AssignmentTensor::filled(w.shape(), 0);
    kmeans_converge(w, dict, assign)
}
