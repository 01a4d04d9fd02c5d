//! Parameter memory, activation buffer memory and operation counts.
//!
//! Conventions:
//!
//! - Parameters: a float layer costs `32·N` bits; a LUT layer
//!   `32·K + N·⌈log₂K⌉`; `fp:n` costs `n·N`. Batch normalization stores
//!   `γ` and `β` at 32 bits; biases are 32 bits.
//! - Multiplications: `O·S·I·F` for a float conv; `O·S·min(K, I·F)` for a LUT
//!   conv, since an output never needs more products than it has inputs.
//! - Additions: one per multiply-accumulate of the float layer, one per
//!   output of a residual add, one per input of an average pool. LUT layers
//!   regroup the same additions.
//! - Batch normalization arithmetic is selectable: excluded, traditional
//!   (two multiplications and two additions per output) or multiplier-less
//!   (one shift and one addition per output).
//! - Buffer memory: the largest `(inputs + outputs) · activation_bits` over
//!   conv and affine layers. Pools and residual adds run in place.
//! - MB in reports means MiB (`2^20` bytes).

mod spec;
pub mod zoo;

pub use spec::{ArchitectureSpec, LayerKind, LayerSpec, PoolType, WeightQuant};

use serde::Serialize;

use crate::error::{LutqError, Result};

pub const BYTES_PER_MB: f64 = (1u64 << 20) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BnCount {
    #[default]
    None,
    Traditional,
    MultiplierLess,
}

impl std::str::FromStr for BnCount {
    type Err = LutqError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BnCount::None),
            "traditional" => Ok(BnCount::Traditional),
            "multiplierless" | "multiplier-less" => Ok(BnCount::MultiplierLess),
            _ => Err(LutqError::Parse(format!(
                "bn accounting must be none, traditional or multiplierless, got {s:?}"
            ))),
        }
    }
}

/// Overrides applied on top of an architecture file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Plan {
    /// Replaces every conv/affine `weight_quant` when set.
    pub weights: Option<WeightQuant>,
    pub bn: BnCount,
}

impl Plan {
    pub fn uniform(w: WeightQuant) -> Self {
        Self {
            weights: Some(w),
            bn: BnCount::None,
        }
    }

    pub fn label(&self) -> String {
        match self.weights {
            None => "as-specified".into(),
            Some(WeightQuant::None) => "float".into(),
            Some(w) => w.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerReport {
    pub name: String,
    pub kind: LayerKind,
    pub weight_quant: WeightQuant,
    pub param_bits: u64,
    pub buffer_bits: u64,
    pub mults: u64,
    pub adds: u64,
    pub shifts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FootprintReport {
    pub arch: String,
    pub plan: String,
    pub layers: Vec<LayerReport>,
    pub param_bits: u64,
    /// Maximum over layers, not a sum.
    pub buffer_bits: u64,
    pub mults: u64,
    pub adds: u64,
    pub shifts: u64,
}

impl FootprintReport {
    pub fn param_mb(&self) -> f64 {
        self.param_bits as f64 / 8.0 / BYTES_PER_MB
    }

    pub fn buffer_mb(&self) -> f64 {
        self.buffer_bits as f64 / 8.0 / BYTES_PER_MB
    }
}

fn weight_quant(l: &LayerSpec, plan: &Plan) -> WeightQuant {
    match l.kind {
        LayerKind::Conv2d | LayerKind::Affine => plan.weights.unwrap_or(l.weight_quant),
        _ => WeightQuant::None,
    }
}

/// Weight count `N` of a conv or affine layer (bias excluded).
pub fn weight_count(l: &LayerSpec) -> u64 {
    match l.kind {
        LayerKind::Conv2d => (l.output_maps * l.input_maps) as u64 * l.filter_taps(),
        LayerKind::Affine => (l.output_maps * l.input_maps) as u64,
        _ => 0,
    }
}

/// Parameter bits of one layer.
pub fn layer_param_bits(l: &LayerSpec, wq: WeightQuant) -> u64 {
    let n = weight_count(l);
    let weights = match wq {
        WeightQuant::None => 32 * n,
        WeightQuant::Lutq(k) => 32 * k + n * WeightQuant::index_bits(k),
        WeightQuant::Fp(b) => b as u64 * n,
    };
    let extra = match l.kind {
        LayerKind::Bn => 2 * l.output_maps as u64,
        LayerKind::Conv2d | LayerKind::Affine if l.bias => l.output_maps as u64,
        _ => 0,
    };
    weights + 32 * extra
}

fn layer_ops(l: &LayerSpec, wq: WeightQuant, bn: BnCount) -> (u64, u64, u64) {
    let out = l.output_count();
    match l.kind {
        LayerKind::Conv2d | LayerKind::Affine => {
            let fan_in = l.input_maps as u64 * l.filter_taps();
            let macs = out * fan_in;
            let mults = match wq {
                WeightQuant::Lutq(k) => out * k.min(fan_in),
                _ => macs,
            };
            (mults, macs, 0)
        }
        LayerKind::Bn => match bn {
            BnCount::None => (0, 0, 0),
            BnCount::Traditional => (2 * out, 2 * out, 0),
            BnCount::MultiplierLess => (0, out, out),
        },
        LayerKind::Add => (0, out, 0),
        LayerKind::Pool => match l.pool_type {
            Some(PoolType::Avg) => (0, l.input_count(), 0),
            _ => (0, 0, 0),
        },
    }
}

/// Full per-layer accounting of `arch` under `plan`.
pub fn report(arch: &ArchitectureSpec, plan: &Plan) -> Result<FootprintReport> {
    arch.validate()?;
    let mut layers = Vec::with_capacity(arch.layers.len());
    for (idx, l) in arch.layers.iter().enumerate() {
        let wq = weight_quant(l, plan);
        let (mults, adds, shifts) = layer_ops(l, wq, plan.bn);
        let buffer_bits = match l.kind {
            LayerKind::Conv2d | LayerKind::Affine => {
                (l.input_count() + l.output_count()) * l.activation_bits as u64
            }
            _ => 0,
        };
        layers.push(LayerReport {
            name: l.label(idx),
            kind: l.kind,
            weight_quant: wq,
            param_bits: layer_param_bits(l, wq),
            buffer_bits,
            mults,
            adds,
            shifts,
        });
    }
    Ok(FootprintReport {
        arch: arch.name.clone(),
        plan: plan.label(),
        param_bits: layers.iter().map(|l| l.param_bits).sum(),
        buffer_bits: layers.iter().map(|l| l.buffer_bits).max().unwrap_or(0),
        mults: layers.iter().map(|l| l.mults).sum(),
        adds: layers.iter().map(|l| l.adds).sum(),
        shifts: layers.iter().map(|l| l.shifts).sum(),
        layers,
    })
}

/// Per-layer and total operation counts.
pub fn count_ops(arch: &ArchitectureSpec, plan: &Plan) -> Result<FootprintReport> {
    report(arch, plan)
}

/// Total parameter bits.
pub fn param_memory(arch: &ArchitectureSpec, plan: &Plan) -> Result<u64> {
    Ok(report(arch, plan)?.param_bits)
}

/// Activation buffer bits.
pub fn buffer_memory(arch: &ArchitectureSpec) -> Result<u64> {
    Ok(report(arch, &Plan::default())?.buffer_bits)
}

/// Plain-text table with one row per report.
pub fn format_table(reports: &[FootprintReport]) -> String {
    let mut s = format!(
        "{:<12} {:<14} {:>14} {:>15} {:>12} {:>12}\n",
        "Network", "Weights", "Param. MB", "Buffer MB", "Adds (M)", "Mults (M)"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<12} {:<14} {:>14.4} {:>15.4} {:>12.2} {:>12.2}\n",
            r.arch,
            r.plan,
            r.param_mb(),
            r.buffer_mb(),
            r.adds as f64 / 1e6,
            r.mults as f64 / 1e6
        ));
    }
    s
}
