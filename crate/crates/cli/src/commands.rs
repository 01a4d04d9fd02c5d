//! Implementations of the `train`, `quantize`, `report` and `infer` commands.
//!
//! Each command returns the text it prints so tests can call it directly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lutq_core::footprint::{self, zoo, ArchitectureSpec, BnCount, FootprintReport, Plan, WeightQuant};
use lutq_core::inference::{grouped_affine, naive_affine, shift_affine, FixedTensor, OpCounts, Overflow};
use lutq_core::nn::{
    bn_fold_scale, train, ActQuantConfig, Activation, BnMode, Dataset, Layer, LayerQuant, Network, PostOp,
};
use lutq_core::quant::{is_pow2, lutq_quantize, quantization_error, split_pow2};
use lutq_core::{Rng, Tensor};
use serde::Serialize;

use crate::config::{parse_bn, parse_weight_quant, RunConfig};
use crate::error::{CliError, CliResult};
use crate::model::{self, SaveOptions};

/// Binary exponent shared by every fixed-point tensor of the shift kernel.
pub const SHIFT_EXPONENT: i32 = -16;

pub struct TrainArgs {
    pub config: PathBuf,
    pub model: PathBuf,
    pub trace: PathBuf,
    /// Value of `LUTQ_SEED`, if set.
    pub seed_override: Option<String>,
}

fn attach_act_quant(net: &mut Network, cfg: &RunConfig) {
    let q = match cfg.act_quant.as_str() {
        "fp" => ActQuantConfig::fp(cfg.act_bits),
        "pow2" => ActQuantConfig::pow2(cfg.act_bits),
        _ => return,
    };
    for layer in &mut net.layers {
        if let Some(post) = layer.post_mut() {
            if post.activation == Activation::ReLU {
                post.act_quant = Some(q.clone());
            }
        }
    }
}

fn build_network(cfg: &RunConfig, data: &Dataset) -> CliResult<Network> {
    if let Some(p) = &cfg.init_model {
        return model::load(p);
    }
    let mut sizes = vec![data.features()];
    sizes.extend(&cfg.hidden_units);
    sizes.push(data.classes);
    let bn = parse_bn(&cfg.batch_norm).map_err(CliError::Config)?;
    Ok(Network::mlp(&mut Rng::new(cfg.seed), &sizes, bn)?)
}

/// Trains a network and writes the model and the per-epoch trace.
pub fn cmd_train(args: &TrainArgs) -> CliResult<String> {
    let cfg = RunConfig::load(&args.config, args.seed_override.as_deref())?;
    let data = cfg.dataset()?;
    let mut net = build_network(&cfg, &data)?;
    if let Some(q) = parse_weight_quant(&cfg.weight_quant).map_err(CliError::Config)? {
        net.quantize_all(&q.with_steps(cfg.kmeans_steps))?;
    }
    attach_act_quant(&mut net, &cfg);
    let trace = train(&mut net, &data, &cfg.train_config())?;
    model::save(&net, &args.model, SaveOptions::default())?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for (e, (l, a)) in trace.loss.iter().zip(&trace.accuracy).enumerate() {
        writeln!(csv, "{},{l},{a}", e + 1).expect("string write");
    }
    std::fs::write(&args.trace, csv)?;
    let mut out = String::new();
    for (e, (l, a)) in trace.loss.iter().zip(&trace.accuracy).enumerate() {
        writeln!(out, "epoch {:>3}  loss {l:.6}  accuracy {a:.4}", e + 1).expect("string write");
    }
    writeln!(out, "model written to {}", args.model.display()).expect("string write");
    Ok(out)
}

pub struct QuantizeArgs {
    pub model: PathBuf,
    pub out: PathBuf,
    pub scheme: String,
    pub keep_accumulators: bool,
}

/// Per-layer result of post-training quantization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerError {
    pub layer: usize,
    pub k: usize,
    /// `½‖W − Q‖²`.
    pub error: f64,
}

/// Post-training quantization of every weight layer, k-means run to
/// convergence from the standard initialization.
pub fn quantize_model(net: &mut Network, scheme: &str) -> CliResult<Vec<LayerError>> {
    let cfg = parse_weight_quant(scheme)
        .map_err(CliError::Config)?
        .ok_or_else(|| CliError::Config("scheme: post-training quantization needs a scheme other than none".into()))?;
    let mut errors = Vec::new();
    for (idx, layer) in net.layers.iter_mut().enumerate() {
        if let Some((w, slot)) = layer.weight_slot() {
            let qw = lutq_quantize(w, &cfg, None)?;
            let error = quantization_error(w, qw.dict(), qw.assign())?;
            errors.push(LayerError {
                layer: idx,
                k: qw.dict().len(),
                error,
            });
            *slot = Some(LayerQuant {
                cfg: cfg.clone(),
                state: Some(qw),
            });
        }
    }
    Ok(errors)
}

pub fn cmd_quantize(args: &QuantizeArgs) -> CliResult<String> {
    let mut net = model::load(&args.model)?;
    let errors = quantize_model(&mut net, &args.scheme)?;
    let opts = SaveOptions {
        strip_accumulators: !args.keep_accumulators,
    };
    model::save(&net, &args.out, opts)?;
    let mut out = String::new();
    for e in &errors {
        writeln!(out, "layer {:>3}  K={:<4} error {:.9e}", e.layer, e.k, e.error).expect("string write");
    }
    writeln!(out, "model written to {}", args.out.display()).expect("string write");
    Ok(out)
}

pub struct ReportArgs {
    /// Path to a TOML architecture file, or a built-in name.
    pub arch: String,
    /// Weight plans (`float`, `lutq:K`, `fp:n`); empty means as specified.
    pub plans: Vec<String>,
    pub bn: String,
    pub table: bool,
}

/// Loads an architecture from a file, falling back to the built-in names.
pub fn load_arch(arch: &str) -> CliResult<ArchitectureSpec> {
    let path = Path::new(arch);
    let spec = if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        ArchitectureSpec::from_toml(&text).map_err(|e| CliError::Config(format!("arch: {e}")))?
    } else if let Some(s) = zoo::by_name(arch) {
        s
    } else {
        return Err(CliError::Config(format!(
            "arch: {arch:?} is neither a file nor one of {}",
            zoo::NAMES.join(", ")
        )));
    };
    spec.validate().map_err(|e| CliError::Config(format!("arch: {e}")))?;
    Ok(spec)
}

pub fn build_reports(args: &ReportArgs) -> CliResult<Vec<FootprintReport>> {
    let arch = load_arch(&args.arch)?;
    let bn: BnCount = args.bn.parse().map_err(|e| CliError::Config(format!("bn: {e}")))?;
    let plans = if args.plans.is_empty() {
        vec![Plan { weights: None, bn }]
    } else {
        args.plans
            .iter()
            .map(|p| {
                let w: WeightQuant = p.parse().map_err(|e| CliError::Config(format!("plan: {e}")))?;
                Ok(Plan { weights: Some(w), bn })
            })
            .collect::<CliResult<_>>()?
    };
    plans
        .iter()
        .map(|p| footprint::report(&arch, p).map_err(|e| CliError::Config(format!("arch: {e}"))))
        .collect()
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<String> {
    let reports = build_reports(args)?;
    if args.table {
        Ok(footprint::format_table(&reports))
    } else {
        let mut s = serde_json::to_string_pretty(&reports).map_err(|e| CliError::Config(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Kernel {
    Naive,
    Grouped,
    Shift,
}

pub struct InferArgs {
    pub model: PathBuf,
    pub input: PathBuf,
    pub kernel: Kernel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counters {
    pub mults: u64,
    pub adds: u64,
    pub shifts: u64,
}

impl From<OpCounts> for Counters {
    fn from(c: OpCounts) -> Self {
        Self {
            mults: c.mults,
            adds: c.adds,
            shifts: c.shifts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferResult {
    pub predictions: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
    pub accuracy: f64,
    pub counters: Counters,
}

fn unsupported(idx: usize, what: &str) -> CliError {
    CliError::Contract(format!("layer {idx}: {what}"))
}

fn row(t: &Tensor) -> CliResult<Tensor> {
    Ok(t.reshape(&[1, t.len()])?)
}

fn flat(t: &Tensor) -> CliResult<Tensor> {
    Ok(t.reshape(&[t.len()])?)
}

fn post(p: &PostOp, z: &Tensor) -> CliResult<Tensor> {
    Ok(flat(&p.apply(row(z)?)?.0)?)
}

/// Float forward pass of one sample through the naive or grouped kernel.
fn infer_float(net: &Network, x: &Tensor, grouped: bool, counts: &mut OpCounts) -> CliResult<Tensor> {
    let mut h = x.clone();
    for (idx, layer) in net.layers.iter().enumerate() {
        h = match layer {
            Layer::Affine(l) => {
                let state = l.quant.as_ref().and_then(|q| q.state.as_ref());
                let (z, c) = match (grouped, state) {
                    (true, Some(qw)) => grouped_affine(qw, &h, &l.bias)?,
                    _ => naive_affine(l.weight()?, &h, &l.bias)?,
                };
                *counts += c;
                post(&l.post, &z)?
            }
            Layer::BatchNorm(bn) => {
                let (a, b) = bn_fold_scale(bn)?;
                let n = h.len() as u64;
                match bn.mode {
                    BnMode::Traditional => {
                        counts.mults += n;
                    }
                    BnMode::MultiplierLess => {
                        counts.shifts += n;
                    }
                }
                counts.adds += n;
                let y: Vec<f64> = (0..h.len()).map(|j| a.data()[j] * h.data()[j] + b.data()[j]).collect();
                Tensor::new(vec![y.len()], y)?
            }
            Layer::Activation(p) => post(p, &h)?,
            Layer::Conv2D(_) => return Err(unsupported(idx, "convolution layers are not supported by infer")),
        };
    }
    Ok(h)
}

fn saturate(v: i128) -> i32 {
    v.clamp(i32::MIN.into(), i32::MAX.into()) as i32
}

fn to_fixed(t: &Tensor) -> CliResult<FixedTensor> {
    Ok(FixedTensor::from_tensor(t, SHIFT_EXPONENT, Overflow::Saturate)?)
}

/// Fixed-point forward pass of one sample using only shifts and additions
/// in the affine and batch normalization layers.
fn infer_shift(net: &Network, x: &Tensor, counts: &mut OpCounts) -> CliResult<Tensor> {
    let mut h = to_fixed(x)?;
    for (idx, layer) in net.layers.iter().enumerate() {
        h = match layer {
            Layer::Affine(l) => {
                let qw = l
                    .quant
                    .as_ref()
                    .and_then(|q| q.state.as_ref())
                    .ok_or_else(|| unsupported(idx, "the shift kernel needs LUT-quantized weights"))?;
                let (z, c) = shift_affine(qw, &h, &to_fixed(&l.bias)?, Overflow::Saturate)?;
                *counts += c;
                if l.post.activation == Activation::Identity && l.post.act_quant.is_none() {
                    z
                } else {
                    to_fixed(&post(&l.post, &z.to_tensor()?)?)?
                }
            }
            Layer::BatchNorm(bn) => {
                if bn.mode != BnMode::MultiplierLess {
                    return Err(unsupported(idx, "the shift kernel needs multiplier-less batch normalization"));
                }
                let (a, b) = bn_fold_scale(bn)?;
                let b = to_fixed(&b)?;
                let mut out = Vec::with_capacity(h.len());
                for (j, &m) in h.mantissas().iter().enumerate() {
                    let s = a.data()[j];
                    let scaled = if s == 0.0 {
                        0
                    } else {
                        debug_assert!(is_pow2(s));
                        counts.shifts += 1;
                        let e = split_pow2(s).1;
                        let m = if s < 0.0 { -i128::from(m) } else { i128::from(m) };
                        if e >= 0 {
                            m << e.min(64)
                        } else {
                            m >> (-e).min(127)
                        }
                    };
                    counts.adds += 1;
                    out.push(saturate(scaled + i128::from(b.mantissas()[j])));
                }
                FixedTensor::new(vec![out.len()], out, SHIFT_EXPONENT)?
            }
            Layer::Activation(p) => to_fixed(&post(p, &h.to_tensor()?)?)?,
            Layer::Conv2D(_) => return Err(unsupported(idx, "convolution layers are not supported by infer")),
        };
    }
    Ok(h.to_tensor()?)
}

pub fn run_inference(net: &Network, data: &Dataset, kernel: Kernel) -> CliResult<InferResult> {
    let mut counts = OpCounts::default();
    let mut logits = Vec::with_capacity(data.len());
    let mut predictions = Vec::with_capacity(data.len());
    let mut correct = 0usize;
    for i in 0..data.len() {
        let (x, labels) = data.batch(&[i])?;
        let x = flat(&x)?;
        let y = match kernel {
            Kernel::Naive => infer_float(net, &x, false, &mut counts)?,
            Kernel::Grouped => infer_float(net, &x, true, &mut counts)?,
            Kernel::Shift => infer_shift(net, &x, &mut counts)?,
        };
        let pred = lutq_core::nn::argmax(y.data());
        correct += usize::from(pred == labels[0]);
        predictions.push(pred);
        logits.push(y.into_data());
    }
    Ok(InferResult {
        predictions,
        logits,
        accuracy: if data.is_empty() { 0.0 } else { correct as f64 / data.len() as f64 },
        counters: counts.into(),
    })
}

pub fn cmd_infer(args: &InferArgs) -> CliResult<String> {
    let net = model::load(&args.model)?;
    let data = Dataset::from_csv(&args.input).map_err(|e| CliError::Config(format!("input: {e}")))?;
    let result = run_inference(&net, &data, args.kernel)?;
    let mut s = serde_json::to_string_pretty(&result).map_err(|e| CliError::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
