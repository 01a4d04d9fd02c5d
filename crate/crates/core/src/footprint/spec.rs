//! Declarative architecture descriptions read from TOML.
//!
//! ```toml
//! name = "tiny"
//! input = [3, 32, 32]        # maps, height, width
//!
//! [[layer]]
//! kind = "conv2d"            # conv2d | affine | bn | pool | add
//! input_maps = 3
//! output_maps = 16
//! map_size = [32, 32]        # output height, width
//! filter_size = [3, 3]
//! stride = 1                 # input size = map_size · stride
//! activation_bits = 32
//! weight_quant = "none"      # none | lutq:K | fp:n
//! ```
//!
//! Pool layers also take `pool_type = "max" | "avg"`; conv and affine layers
//! take `bias = true` to count a bias vector.

use serde::{Deserialize, Serialize};

use crate::error::{LutqError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d,
    Affine,
    Bn,
    Pool,
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolType {
    Max,
    Avg,
}

/// Weight representation of a conv or affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WeightQuant {
    /// 32-bit floats.
    #[default]
    None,
    /// Dictionary of `K` 32-bit values plus `⌈log₂K⌉`-bit indices.
    Lutq(u64),
    /// `n`-bit fixed-point weights.
    Fp(u32),
}

impl WeightQuant {
    /// Bits of one assignment index, `⌈log₂K⌉`.
    pub fn index_bits(k: u64) -> u64 {
        if k <= 1 {
            0
        } else {
            64 - (k - 1).leading_zeros() as u64
        }
    }
}

impl std::str::FromStr for WeightQuant {
    type Err = LutqError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || LutqError::Parse(format!("weight_quant must be none, float, lutq:K or fp:n, got {s:?}"));
        match s.trim() {
            "none" | "float" => Ok(WeightQuant::None),
            other => {
                let (tag, n) = other.split_once(':').ok_or_else(bad)?;
                match tag {
                    "lutq" => match n.parse::<u64>() {
                        Ok(k) if k >= 1 => Ok(WeightQuant::Lutq(k)),
                        _ => Err(bad()),
                    },
                    "fp" => match n.parse::<u32>() {
                        Ok(b) if (2..=32).contains(&b) => Ok(WeightQuant::Fp(b)),
                        _ => Err(bad()),
                    },
                    _ => Err(bad()),
                }
            }
        }
    }
}

impl TryFrom<String> for WeightQuant {
    type Error = LutqError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WeightQuant> for String {
    fn from(w: WeightQuant) -> String {
        w.to_string()
    }
}

impl std::fmt::Display for WeightQuant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightQuant::None => write!(f, "none"),
            WeightQuant::Lutq(k) => write!(f, "lutq:{k}"),
            WeightQuant::Fp(n) => write!(f, "fp:{n}"),
        }
    }
}

fn one_by_one() -> [usize; 2] {
    [1, 1]
}

fn one() -> usize {
    1
}

fn thirty_two() -> u32 {
    32
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: LayerKind,
    pub input_maps: usize,
    pub output_maps: usize,
    /// Output map height and width.
    pub map_size: [usize; 2],
    #[serde(default = "one_by_one")]
    pub filter_size: [usize; 2],
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "thirty_two")]
    pub activation_bits: u32,
    #[serde(default)]
    pub weight_quant: WeightQuant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_type: Option<PoolType>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub bias: bool,
}

impl LayerSpec {
    /// Input map height and width (`map_size · stride`).
    pub fn input_size(&self) -> [usize; 2] {
        [self.map_size[0] * self.stride, self.map_size[1] * self.stride]
    }

    /// Output activations `O·S`.
    pub fn output_count(&self) -> u64 {
        (self.output_maps * self.map_size[0] * self.map_size[1]) as u64
    }

    /// Input activations `I·S_in`.
    pub fn input_count(&self) -> u64 {
        let [h, w] = self.input_size();
        (self.input_maps * h * w) as u64
    }

    /// Filter taps `F`.
    pub fn filter_taps(&self) -> u64 {
        (self.filter_size[0] * self.filter_size[1]) as u64
    }

    pub fn label(&self, idx: usize) -> String {
        self.name.clone().unwrap_or_else(|| format!("layer{idx}"))
    }

    fn output_shape(&self) -> (usize, usize, usize) {
        (self.output_maps, self.map_size[0], self.map_size[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub name: String,
    /// Network input `[maps, height, width]`.
    pub input: [usize; 3],
    #[serde(rename = "layer", default)]
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| LutqError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LutqError::Parse(e.to_string()))
    }

    /// Checks that every layer reads a shape produced by the network input
    /// or an earlier layer, and that per-kind fields are consistent.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(LutqError::Argument(format!("architecture {:?} has no layers", self.name)));
        }
        let [c, h, w] = self.input;
        let mut produced = vec![(c, h, w)];
        for (idx, l) in self.layers.iter().enumerate() {
            let label = l.label(idx);
            let err = |msg: String| Err(LutqError::Argument(format!("{label}: {msg}")));
            if l.input_maps == 0 || l.output_maps == 0 || l.map_size.contains(&0) || l.stride == 0 {
                return err("sizes must be positive".into());
            }
            if l.filter_size.contains(&0) {
                return err("filter size must be positive".into());
            }
            let [ih, iw] = l.input_size();
            let matches = match l.kind {
                LayerKind::Affine => {
                    if l.map_size != [1, 1] || l.stride != 1 {
                        return err("affine layers have map_size [1, 1] and stride 1".into());
                    }
                    produced.iter().any(|&(c, h, w)| c * h * w == l.input_maps)
                }
                _ => produced.contains(&(l.input_maps, ih, iw)),
            };
            if !matches {
                return err(format!(
                    "input {}x{}x{} is not produced by the network input or an earlier layer",
                    l.input_maps, ih, iw
                ));
            }
            match l.kind {
                LayerKind::Bn | LayerKind::Add if l.input_maps != l.output_maps || l.stride != 1 => {
                    return err("bn and add layers keep their shape".into());
                }
                LayerKind::Pool if l.pool_type.is_none() => {
                    return err("pool layers need pool_type".into());
                }
                LayerKind::Pool if l.input_maps != l.output_maps => {
                    return err("pool layers keep the number of maps".into());
                }
                _ => {}
            }
            if !matches!(l.kind, LayerKind::Conv2d | LayerKind::Affine)
                && (l.weight_quant != WeightQuant::None || l.bias)
            {
                return err("only conv2d and affine layers carry weights".into());
            }
            if l.activation_bits == 0 {
                return err("activation_bits must be positive".into());
            }
            produced.push(l.output_shape());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
name = "tiny"
input = [10, 1, 1]

[[layer]]
kind = "affine"
input_maps = 10
output_maps = 10
map_size = [1, 1]
activation_bits = 8
weight_quant = "lutq:4"
"#;

    #[test]
    fn parses_and_round_trips() {
        let a = ArchitectureSpec::from_toml(TINY).unwrap();
        assert_eq!(a.layers[0].weight_quant, WeightQuant::Lutq(4));
        let b = ArchitectureSpec::from_toml(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_unknown_fields_and_broken_chains() {
        let extra = TINY.replace("activation_bits = 8", "activation_bits = 8\ncolour = 1");
        assert!(matches!(ArchitectureSpec::from_toml(&extra), Err(LutqError::Parse(_))));
        let broken = TINY.replace("input_maps = 10", "input_maps = 11");
        assert!(matches!(ArchitectureSpec::from_toml(&broken), Err(LutqError::Argument(_))));
        let empty = "name = \"e\"\ninput = [1, 1, 1]\n";
        assert!(ArchitectureSpec::from_toml(empty).is_err());
    }

    #[test]
    fn index_bits() {
        let bits: Vec<u64> = [1, 2, 3, 4, 16, 17, 256].iter().map(|&k| WeightQuant::index_bits(k)).collect();
        assert_eq!(bits, vec![0, 1, 2, 2, 4, 5, 8]);
    }
}
