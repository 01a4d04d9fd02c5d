//! Full LUT quantization of a weight tensor under a configurable scheme.

use super::dictionary::{AssignmentTensor, Constraint, Dictionary, QuantizedWeight};
use super::fixed::uniform_grid;
use super::kmeans::{kmeans_init, kmeans_step, kmeans_step_fixed};
use super::pow2::{dynamic_range, exp2i, split_pow2};
use crate::error::{LutqError, Result};
use crate::tensor::Tensor;

/// How a layer's dictionary is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantScheme {
    /// Learned dictionary of `k` free values.
    Free { k: usize },
    /// Learned dictionary whose entries are rounded to powers of two.
    PowerOfTwo { k: usize },
    /// Zero entry plus `k - 1` learned entries; `ratio` of the weights are
    /// pinned to zero.
    Pruned { k: usize, ratio: f64, pow2: bool },
    /// Dictionary given up front, e.g. `[-1, 1]` for binary weights.
    Fixed { values: Vec<f64> },
    /// Signed fixed-point grid. Without an explicit step, the step is
    /// `r / 2^(n-1)` with `r` the per-layer dynamic range.
    Uniform { n_bits: u32, delta: Option<f64> },
}

impl QuantScheme {
    /// Dictionary size.
    pub fn k(&self) -> usize {
        match self {
            QuantScheme::Free { k } | QuantScheme::PowerOfTwo { k } => *k,
            QuantScheme::Pruned { k, .. } => *k,
            QuantScheme::Fixed { values } => values.len(),
            QuantScheme::Uniform { n_bits, .. } => (1usize << n_bits) - 1,
        }
    }

    pub fn is_pow2(&self) -> bool {
        match self {
            QuantScheme::PowerOfTwo { .. } => true,
            QuantScheme::Pruned { pow2, .. } => *pow2,
            QuantScheme::Fixed { values } => values.iter().all(|&v| super::pow2::is_pow2(v)),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerConfig {
    pub scheme: QuantScheme,
    /// k-means steps per refresh.
    pub kmeans_steps: usize,
}

impl QuantizerConfig {
    pub fn new(scheme: QuantScheme) -> Self {
        Self {
            scheme,
            kmeans_steps: 1,
        }
    }

    pub fn free(k: usize) -> Self {
        Self::new(QuantScheme::Free { k })
    }

    pub fn pow2(k: usize) -> Self {
        Self::new(QuantScheme::PowerOfTwo { k })
    }

    pub fn pruned(k: usize, ratio: f64) -> Self {
        Self::new(QuantScheme::Pruned {
            k,
            ratio,
            pow2: false,
        })
    }

    pub fn binary() -> Self {
        Self::new(QuantScheme::Fixed {
            values: vec![-1.0, 1.0],
        })
    }

    pub fn ternary() -> Self {
        Self::new(QuantScheme::Fixed {
            values: vec![-1.0, 0.0, 1.0],
        })
    }

    pub fn with_steps(mut self, m: usize) -> Self {
        self.kmeans_steps = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kmeans_steps == 0 {
            return Err(LutqError::Argument("kmeans_steps must be >= 1".into()));
        }
        match &self.scheme {
            QuantScheme::Free { k } | QuantScheme::PowerOfTwo { k } if *k == 0 => {
                Err(LutqError::Argument("dictionary size must be >= 1".into()))
            }
            QuantScheme::Pruned { k, ratio, .. } if *k < 2 || !(0.0..1.0).contains(ratio) => {
                Err(LutqError::Argument(format!(
                    "pruned scheme needs K >= 2 and ratio in [0, 1), got K={k} ratio={ratio}"
                )))
            }
            QuantScheme::Fixed { values } if values.is_empty() => {
                Err(LutqError::Argument("fixed dictionary is empty".into()))
            }
            QuantScheme::Uniform { n_bits, .. } if !(2..=16).contains(n_bits) => Err(
                LutqError::Argument(format!("uniform scheme needs 2..=16 bits, got {n_bits}")),
            ),
            _ => Ok(()),
        }
    }

    fn learned_constraint(&self) -> Option<Constraint> {
        match self.scheme {
            QuantScheme::Free { .. } => Some(Constraint::Free),
            QuantScheme::PowerOfTwo { .. } => Some(Constraint::PowerOfTwo),
            QuantScheme::Pruned { ratio, pow2, .. } => Some(Constraint::ZeroPinnedFirst {
                pruning_ratio: ratio,
                pow2,
            }),
            _ => None,
        }
    }
}

/// Step size for the uniform scheme: a power of two such that the largest
/// code `(2^(n-1) - 1) · delta` stays just below the dynamic range.
pub fn uniform_delta(w: &Tensor, n_bits: u32) -> Result<f64> {
    let r = dynamic_range(w)?;
    let (_, e) = split_pow2(r);
    Ok(exp2i(e - (n_bits as i32 - 1)))
}

/// Quantizes `w` under `cfg`.
///
/// Learned schemes run `cfg.kmeans_steps` k-means steps starting from
/// `state`, or from the standard initialization (evenly spaced centroids
/// clustered to convergence) when no state is given. Fixed and uniform
/// schemes only reassign.
pub fn lutq_quantize(
    w: &Tensor,
    cfg: &QuantizerConfig,
    state: Option<(Dictionary, AssignmentTensor)>,
) -> Result<QuantizedWeight> {
    cfg.validate()?;
    if let Some(constraint) = cfg.learned_constraint() {
        let k = cfg.scheme.k();
        let (mut dict, mut assign) = match state {
            Some((d, a)) => {
                if d.constraint() != constraint || d.len() != k {
                    return Err(LutqError::State(format!(
                        "stored dictionary ({:?}, K={}) does not match the configured scheme",
                        d.constraint(),
                        d.len()
                    )));
                }
                (d, a)
            }
            None => kmeans_init(w, k, constraint)?,
        };
        for _ in 0..cfg.kmeans_steps {
            let (d, a) = kmeans_step(w, &dict, &assign)?;
            dict = d;
            assign = a;
        }
        return QuantizedWeight::new(dict, assign);
    }
    let dict = match &cfg.scheme {
        QuantScheme::Fixed { values } => Dictionary::fixed(values.clone())?,
        QuantScheme::Uniform { n_bits, delta } => {
            let delta = match delta {
                Some(d) => *d,
                None => uniform_delta(w, *n_bits)?,
            };
            Dictionary::new(
                uniform_grid(*n_bits, delta)?,
                Constraint::UniformFixedPoint {
                    n_bits: *n_bits,
                    delta,
                },
            )?
        }
        _ => unreachable!("learned schemes handled above"),
    };
    let assign = kmeans_step_fixed(w, &dict)?;
    QuantizedWeight::new(dict, assign)
}
