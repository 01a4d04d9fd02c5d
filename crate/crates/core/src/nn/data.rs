//! Classification datasets: a seeded Gaussian-blob generator and a
//! delimiter-separated file loader (label in the last column).

use std::path::Path;

use crate::error::{LutqError, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Features `[N, D]`.
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(x: Tensor, labels: Vec<usize>) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != labels.len() {
            return Err(LutqError::Dimension(format!(
                "features {:?} for {} labels",
                x.shape(),
                labels.len()
            )));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self { x, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.row_len()
    }

    /// Rows `idx` as a `[B, D]` batch with their labels.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let d = self.features();
        let mut data = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(LutqError::Index {
                    index: i,
                    size: self.len(),
                });
            }
            data.extend_from_slice(self.x.row(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(vec![idx.len(), d], data)?, labels))
    }

    /// `n` 2-D points in `classes` Gaussian blobs of standard deviation `std`.
    ///
    /// Centres sit on a circle of radius `2.5·√2` starting at 45°, so four
    /// classes land on `(±2.5, ±2.5)`. Labels cycle through the classes.
    pub fn blobs(seed: u64, n: usize, classes: usize, std: f64) -> Result<Self> {
        if classes == 0 {
            return Err(LutqError::Argument("blobs need at least one class".into()));
        }
        let mut rng = Rng::new(seed);
        let radius = 2.5 * std::f64::consts::SQRT_2;
        let mut data = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % classes;
            let angle = std::f64::consts::FRAC_PI_4 + std::f64::consts::TAU * c as f64 / classes as f64;
            data.push(radius * angle.cos() + std * rng.normal());
            data.push(radius * angle.sin() + std * rng.normal());
            labels.push(c);
        }
        let mut ds = Self::new(Tensor::new(vec![n, 2], data)?, labels)?;
        ds.classes = classes;
        Ok(ds)
    }

    /// Reads one sample per row. A first row that does not parse as numbers
    /// is taken as a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| LutqError::Io(format!("{}: {e}", path.display())))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| LutqError::Parse(e.to_string()))?;
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if line == 0 => continue,
                Err(e) => return Err(LutqError::Parse(format!("row {}: {e}", line + 1))),
            };
            if values.len() < 2 {
                return Err(LutqError::Parse(format!("row {} has no features", line + 1)));
            }
            if *width.get_or_insert(values.len()) != values.len() {
                return Err(LutqError::Parse(format!("row {} has a different width", line + 1)));
            }
            let label = values[values.len() - 1];
            if label < 0.0 || label.fract() != 0.0 {
                return Err(LutqError::Parse(format!("row {}: label {label} is not a class index", line + 1)));
            }
            labels.push(label as usize);
            data.extend_from_slice(&values[..values.len() - 1]);
        }
        let w = width.ok_or_else(|| LutqError::Parse(format!("{} holds no samples", path.display())))?;
        Self::new(Tensor::new(vec![labels.len(), w - 1], data)?, labels)
    }
}
