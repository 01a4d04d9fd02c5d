//! Dictionaries, assignment tensors and the table lookup that joins them.
//!
//! Assignment indices are zero-based: index `k` selects `values[k]`.

use super::pow2::is_pow2;
use crate::error::{LutqError, Result};
use crate::tensor::Tensor;

/// Rule governing how a dictionary may change during clustering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    /// Centroids are plain cluster means.
    Free,
    /// Values are given up front and never updated; only assignments move.
    Fixed,
    /// Centroids are rounded to the nearest signed power of two after every
    /// centroid pass.
    PowerOfTwo,
    /// `values[0]` is pinned to zero and receives exactly `⌈ratio · N⌉` of
    /// the smallest-magnitude weights. The other entries are free, or
    /// power-of-two when `pow2` is set.
    ZeroPinnedFirst { pruning_ratio: f64, pow2: bool },
    /// Fixed symmetric grid `{k · delta}` of a signed `n_bits` number.
    UniformFixedPoint { n_bits: u32, delta: f64 },
}

impl Constraint {
    /// Whether the k-means centroid pass may move the dictionary.
    pub fn is_trainable(&self) -> bool {
        !matches!(self, Constraint::Fixed | Constraint::UniformFixedPoint { .. })
    }

    pub fn rounds_to_pow2(&self) -> bool {
        matches!(
            self,
            Constraint::PowerOfTwo | Constraint::ZeroPinnedFirst { pow2: true, .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    values: Vec<f64>,
    constraint: Constraint,
}

impl Dictionary {
    /// Builds a dictionary and checks it against its constraint.
    pub fn new(values: Vec<f64>, constraint: Constraint) -> Result<Self> {
        let d = Self { values, constraint };
        d.validate()?;
        Ok(d)
    }

    pub fn free(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Constraint::Free)
    }

    pub fn fixed(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Constraint::Fixed)
    }

    pub fn binary() -> Self {
        Self {
            values: vec![-1.0, 1.0],
            constraint: Constraint::Fixed,
        }
    }

    pub fn ternary() -> Self {
        Self {
            values: vec![-1.0, 0.0, 1.0],
            constraint: Constraint::Fixed,
        }
    }

    /// Skips validation; callers must uphold the constraint.
    pub(crate) fn from_parts(values: Vec<f64>, constraint: Constraint) -> Self {
        Self { values, constraint }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(LutqError::NonFinite("Dictionary"));
        }
        match self.constraint {
            Constraint::Free | Constraint::Fixed => {
                if self.values.is_empty() && matches!(self.constraint, Constraint::Free) {
                    return Err(LutqError::Argument("dictionary needs K >= 1".into()));
                }
            }
            Constraint::PowerOfTwo => {
                if self.values.is_empty() {
                    return Err(LutqError::Argument("dictionary needs K >= 1".into()));
                }
                if let Some(v) = self.values.iter().find(|v| !is_pow2(**v)) {
                    return Err(LutqError::Contract(format!(
                        "power-of-two dictionary holds {v}"
                    )));
                }
            }
            Constraint::ZeroPinnedFirst { pruning_ratio, pow2 } => {
                if !(0.0..1.0).contains(&pruning_ratio) {
                    return Err(LutqError::Argument(format!(
                        "pruning ratio must lie in [0, 1), got {pruning_ratio}"
                    )));
                }
                if self.values.len() < 2 {
                    return Err(LutqError::Argument(
                        "zero-pinned dictionary needs K >= 2".into(),
                    ));
                }
                if self.values[0] != 0.0 {
                    return Err(LutqError::Contract(format!(
                        "zero-pinned dictionary starts with {}",
                        self.values[0]
                    )));
                }
                if pow2 {
                    if let Some(v) = self.values[1..].iter().find(|v| !is_pow2(**v)) {
                        return Err(LutqError::Contract(format!(
                            "power-of-two dictionary holds {v}"
                        )));
                    }
                }
            }
            Constraint::UniformFixedPoint { n_bits, delta } => {
                let grid = super::fixed::uniform_grid(n_bits, delta)?;
                if grid != self.values {
                    return Err(LutqError::Contract(
                        "uniform dictionary does not match its grid".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-weight indices into a dictionary, shaped like the weight tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentTensor {
    shape: Vec<usize>,
    indices: Vec<u32>,
}

impl AssignmentTensor {
    pub fn new(shape: Vec<usize>, indices: Vec<u32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != indices.len() {
            return Err(LutqError::Dimension(format!(
                "assignment shape {:?} holds {} entries, got {}",
                shape,
                n,
                indices.len()
            )));
        }
        Ok(Self { shape, indices })
    }

    pub fn filled(shape: &[usize], index: u32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            indices: vec![index; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn count(&self, index: u32) -> usize {
        self.indices.iter().filter(|&&i| i == index).count()
    }

    /// Checks every entry against a dictionary of size `k`.
    pub fn check_range(&self, k: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i as usize >= k) {
            Some(&i) => Err(LutqError::Index {
                index: i as usize,
                size: k,
            }),
            None => Ok(()),
        }
    }
}

/// Exact gather `out[i] = dict[assign[i]]`.
pub fn lookup(dict: &Dictionary, assign: &AssignmentTensor) -> Result<Tensor> {
    assign.check_range(dict.len())?;
    let data = assign
        .indices
        .iter()
        .map(|&i| dict.values[i as usize])
        .collect();
    Tensor::new(assign.shape.clone(), data)
}

/// Half the squared distance between `w` and its reconstruction.
pub fn quantization_error(w: &Tensor, dict: &Dictionary, assign: &AssignmentTensor) -> Result<f64> {
    if w.shape() != assign.shape() {
        return Err(LutqError::Dimension(format!(
            "weights {:?} vs assignments {:?}",
            w.shape(),
            assign.shape()
        )));
    }
    assign.check_range(dict.len())?;
    Ok(0.5
        * w.data()
            .iter()
            .zip(&assign.indices)
            .map(|(&x, &i)| {
                let e = x - dict.values[i as usize];
                e * e
            })
            .sum::<f64>())
}

/// A dictionary/assignment pair together with the reconstructed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeight {
    dict: Dictionary,
    assign: AssignmentTensor,
    q: Tensor,
}

impl QuantizedWeight {
    pub fn new(dict: Dictionary, assign: AssignmentTensor) -> Result<Self> {
        let q = lookup(&dict, &assign)?;
        Ok(Self { dict, assign, q })
    }

    pub fn dict(&self) -> &Dictionary {
        &self.dict
    }

    pub fn assign(&self) -> &AssignmentTensor {
        &self.assign
    }

    /// Cached `lookup(dict, assign)`.
    pub fn q(&self) -> &Tensor {
        &self.q
    }

    pub fn into_parts(self) -> (Dictionary, AssignmentTensor) {
        (self.dict, self.assign)
    }
}
