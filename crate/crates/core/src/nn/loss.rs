//! Losses returning `(mean loss, gradient w.r.t. the network output)`.

use super::layers::softmax_rows;
use crate::error::{LutqError, Result};
use crate::tensor::Tensor;

const MIN_PROB: f64 = 1e-300;

fn check_labels(out: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if out.shape().len() != 2 || out.rows() != labels.len() {
        return Err(LutqError::Dimension(format!(
            "outputs {:?} for {} labels",
            out.shape(),
            labels.len()
        )));
    }
    let c = out.row_len();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(LutqError::Index { index: bad, size: c });
    }
    Ok((out.rows(), c))
}

/// Cross-entropy of softmax(logits), averaged over the batch.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = check_labels(logits, labels)?;
    let p = softmax_rows(logits)?;
    let mut loss = 0.0;
    let mut grad = p.data().to_vec();
    for (r, &l) in labels.iter().enumerate() {
        loss -= p.data()[r * c + l].max(MIN_PROB).ln();
        grad[r * c + l] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g /= b as f64);
    Ok((loss / b as f64, Tensor::new(vec![b, c], grad)?))
}

/// Cross-entropy of probabilities already produced by a softmax layer.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = check_labels(probs, labels)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * c];
    for (r, &l) in labels.iter().enumerate() {
        let p = probs.data()[r * c + l].max(MIN_PROB);
        loss -= p.ln();
        grad[r * c + l] = -1.0 / (p * b as f64);
    }
    Ok((loss / b as f64, Tensor::new(vec![b, c], grad)?))
}

/// `½ Σ (y − t)²` averaged over the batch.
pub fn squared_error(out: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let diff = out.sub(target)?;
    let b = out.rows() as f64;
    Ok((0.5 * diff.sum_squares() / b, diff.scale(1.0 / b)?))
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(out: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, _) = check_labels(out, labels)?;
    if b == 0 {
        return Ok(0.0);
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(r, &l)| argmax(out.row(*r)) == l)
        .count();
    Ok(hits as f64 / b as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let z = Tensor::zeros(&[1, 4]);
        let (l, g) = softmax_cross_entropy(&z, &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert_eq!(g.data(), &[0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn label_out_of_range() {
        let z = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            softmax_cross_entropy(&z, &[2]),
            Err(LutqError::Index { index: 2, size: 2 })
        ));
    }

    #[test]
    fn accuracy_counts_argmax() {
        let z = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(accuracy(&z, &[0, 0]).unwrap(), 0.5);
    }
}
