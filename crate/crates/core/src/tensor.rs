//! Dense row-major tensors and a seeded, portable random stream.
//!
//! All arithmetic is `f64`. Reductions run in a fixed left-to-right order so
//! results are reproducible bit for bit.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{LutqError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape covers the data and that every
    /// value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return Err(LutqError::Dimension(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LutqError::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// Size of the leading axis.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all axes after the leading one.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[r * w..(r + 1) * w]
    }

    /// Elementwise map. Fails if any output is not finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        self.map(|v| v * s)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(LutqError::Dimension(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.shape.clone(), data)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Matrix-vector product `a · x` for `a` of shape `[O, I]` and `x` of length `I`.
///
/// Each output row is summed left to right over the inner index.
pub fn tensor_matmul(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || x.shape.len() != 1 || a.shape[1] != x.shape[0] {
        return Err(LutqError::Dimension(format!(
            "cannot multiply {:?} by {:?}",
            a.shape, x.shape
        )));
    }
    let (o, i) = (a.shape[0], a.shape[1]);
    let mut out = Vec::with_capacity(o);
    for r in 0..o {
        let row = &a.data[r * i..(r + 1) * i];
        let mut acc = 0.0;
        for (w, v) in row.iter().zip(&x.data) {
            acc += w * v;
        }
        out.push(acc);
    }
    Tensor::new(vec![o], out)
}

/// Seeded random stream. Identical seeds yield identical streams on every
/// platform (ChaCha8 is specified bit-exactly).
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.random();
        let v = lo + (hi - lo) * u;
        // Rounding can land exactly on `hi` for wide ranges.
        if v >= hi {
            lo.max(hi - (hi - lo) * f64::EPSILON)
        } else {
            v
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

/// Tensor of i.i.d. uniform samples in `[lo, hi)`.
pub fn rng_uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(LutqError::Argument(format!(
            "uniform range requires lo < hi, got [{lo}, {hi})"
        )));
    }
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Tensor of i.i.d. normal samples with the given standard deviation.
pub fn rng_normal(rng: &mut Rng, shape: &[usize], std: f64) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * rng.normal()).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Rng;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let a = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = tensor_matmul(&a, &t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn small_matmul() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = tensor_matmul(&a, &t(&[2], &[1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let err = tensor_matmul(&a, &Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(err, LutqError::Dimension(_)));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(matches!(
            Tensor::new(vec![1], vec![f64::NAN]),
            Err(LutqError::NonFinite(_))
        ));
        assert!(Tensor::new(vec![0], vec![]).is_ok());
    }

    #[test]
    fn uniform_is_deterministic() {
        let a = rng_uniform(&mut Rng::new(0), &[3, 4], -1.0, 1.0).unwrap();
        let b = rng_uniform(&mut Rng::new(0), &[3, 4], -1.0, 1.0).unwrap();
        assert_eq!(a, b);
        let c = rng_uniform(&mut Rng::new(1), &[3, 4], -1.0, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_mean_and_bounds() {
        let s = rng_uniform(&mut Rng::new(0), &[10_000], 0.0, 1.0).unwrap();
        assert!(s.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        let mean = s.data().iter().sum::<f64>() / s.len() as f64;
        assert!((0.45..=0.55).contains(&mean), "mean {mean}");
    }

    #[test]
    fn uniform_rejects_empty_range() {
        let err = rng_uniform(&mut Rng::new(0), &[2], 1.0, 1.0).unwrap_err();
        assert!(matches!(err, LutqError::Argument(_)));
    }

    proptest! {
        #[test]
        fn matmul_distributes_over_addition(seed in 0u64..1000, o in 1usize..6, i in 1usize..6) {
            let mut rng = Rng::new(seed);
            let m = rng_uniform(&mut rng, &[o, i], -1.0, 1.0).unwrap();
            let x = rng_uniform(&mut rng, &[i], -1.0, 1.0).unwrap();
            let y = rng_uniform(&mut rng, &[i], -1.0, 1.0).unwrap();
            let lhs = tensor_matmul(&m, &x.add(&y).unwrap()).unwrap();
            let rhs = tensor_matmul(&m, &x).unwrap().add(&tensor_matmul(&m, &y).unwrap()).unwrap();
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                let scale = a.abs().max(b.abs()).max(1.0);
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }
    }
}
