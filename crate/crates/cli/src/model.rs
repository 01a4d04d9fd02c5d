//! Binary model files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "LUTQ"  u16 version  u32 layer_count
//! per layer:  u8 tag  u64 payload_len  payload
//! ```
//!
//! Tags: 1 affine, 2 conv2d, 3 batch norm, 4 activation. Weight layers store
//! their bias and, unless stripped, the full-precision accumulator as `f64`.
//! A quantized layer stores its scheme, its dictionary as `f64`, and its
//! assignments packed at `⌈log₂K⌉` bits per index, LSB first, with each
//! weight row padded to a whole byte. A stripped layer is reloaded with
//! `w_full = Q`.

use std::io::Write;
use std::path::Path;

use lutq_core::footprint::WeightQuant;
use lutq_core::nn::{
    ActQuantConfig, ActScheme, Activation, AffineLayer, BatchNormLayer, BnMode, Conv2DLayer, Layer, LayerQuant,
    Network, PostOp,
};
use lutq_core::quant::{AssignmentTensor, Constraint, Dictionary, QuantScheme, QuantizedWeight, QuantizerConfig};
use lutq_core::Tensor;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"LUTQ";
pub const VERSION: u16 = 1;

/// Upper bound on the element count of a stored tensor.
const MAX_ELEMENTS: usize = 1 << 28;

const TAG_AFFINE: u8 = 1;
const TAG_CONV: u8 = 2;
const TAG_BN: u8 = 3;
const TAG_ACT: u8 = 4;

/// Serialization options.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SaveOptions {
    /// Omit full-precision accumulators of quantized layers.
    pub strip_accumulators: bool,
}

#[derive(Default)]
struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn shape(&mut self, s: &[usize]) {
        self.u8(s.len() as u8);
        s.iter().for_each(|&d| self.u32(d));
    }
    fn tensor(&mut self, t: &Tensor) {
        self.shape(t.shape());
        self.f64s(t.data());
    }
}

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::Corrupt(msg.into())
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> CliResult<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> CliResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> CliResult<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> CliResult<Vec<f64>> {
        if n > self.buf.len() / 8 + 1 {
            return Err(corrupt(format!("implausible length {n}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn shape(&mut self) -> CliResult<Vec<usize>> {
        let nd = self.u8()? as usize;
        if nd == 0 {
            return Err(corrupt("tensor with no dimensions"));
        }
        let s: Vec<usize> = (0..nd).map(|_| self.u32()).collect::<CliResult<_>>()?;
        s.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| corrupt(format!("implausible shape {s:?}")))?;
        Ok(s)
    }
    fn tensor(&mut self) -> CliResult<Tensor> {
        let s = self.shape()?;
        let data = self.f64s(s.iter().product())?;
        Tensor::new(s, data).map_err(|e| corrupt(e.to_string()))
    }
    fn flag(&mut self) -> CliResult<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(corrupt(format!("invalid flag byte {b}"))),
        }
    }
}

fn put_activation(o: &mut Out, a: Activation) {
    o.u8(match a {
        Activation::Identity => 0,
        Activation::ReLU => 1,
        Activation::Softmax => 2,
    });
}

fn get_activation(i: &mut In) -> CliResult<Activation> {
    match i.u8()? {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::ReLU),
        2 => Ok(Activation::Softmax),
        b => Err(corrupt(format!("unknown activation {b}"))),
    }
}

fn put_post(o: &mut Out, p: &PostOp) {
    put_activation(o, p.activation);
    match &p.act_quant {
        None => o.u8(0),
        Some(q) => {
            o.u8(1);
            o.u8(match q.scheme {
                ActScheme::None => 0,
                ActScheme::Fp => 1,
                ActScheme::Pow2 => 2,
            });
            o.u32(q.n_bits as usize);
            match q.range_r {
                None => o.u8(0),
                Some(r) => {
                    o.u8(1);
                    o.f64(r);
                }
            }
        }
    }
}

fn get_post(i: &mut In) -> CliResult<PostOp> {
    let activation = get_activation(i)?;
    let act_quant = if i.flag()? {
        let scheme = match i.u8()? {
            0 => ActScheme::None,
            1 => ActScheme::Fp,
            2 => ActScheme::Pow2,
            b => return Err(corrupt(format!("unknown activation scheme {b}"))),
        };
        let n_bits = i.u32()? as u32;
        let range_r = if i.flag()? { Some(i.f64()?) } else { None };
        Some(ActQuantConfig {
            n_bits,
            scheme,
            range_r,
        })
    } else {
        None
    };
    let p = PostOp {
        activation,
        act_quant,
    };
    p.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(p)
}

fn put_scheme(o: &mut Out, cfg: &QuantizerConfig) {
    o.u32(cfg.kmeans_steps);
    match &cfg.scheme {
        QuantScheme::Free { k } => {
            o.u8(0);
            o.u32(*k);
        }
        QuantScheme::PowerOfTwo { k } => {
            o.u8(1);
            o.u32(*k);
        }
        QuantScheme::Pruned { k, ratio, pow2 } => {
            o.u8(2);
            o.u32(*k);
            o.f64(*ratio);
            o.u8(u8::from(*pow2));
        }
        QuantScheme::Fixed { values } => {
            o.u8(3);
            o.u32(values.len());
            o.f64s(values);
        }
        QuantScheme::Uniform { n_bits, delta } => {
            o.u8(4);
            o.u32(*n_bits as usize);
            match delta {
                None => o.u8(0),
                Some(d) => {
                    o.u8(1);
                    o.f64(*d);
                }
            }
        }
    }
}

fn get_scheme(i: &mut In) -> CliResult<QuantizerConfig> {
    let steps = i.u32()?;
    let scheme = match i.u8()? {
        0 => QuantScheme::Free { k: i.u32()? },
        1 => QuantScheme::PowerOfTwo { k: i.u32()? },
        2 => QuantScheme::Pruned {
            k: i.u32()?,
            ratio: i.f64()?,
            pow2: i.flag()?,
        },
        3 => {
            let n = i.u32()?;
            QuantScheme::Fixed { values: i.f64s(n)? }
        }
        4 => QuantScheme::Uniform {
            n_bits: i.u32()? as u32,
            delta: if i.flag()? { Some(i.f64()?) } else { None },
        },
        b => return Err(corrupt(format!("unknown quantization scheme {b}"))),
    };
    let cfg = QuantizerConfig::new(scheme).with_steps(steps);
    cfg.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(cfg)
}

fn put_constraint(o: &mut Out, c: Constraint) {
    match c {
        Constraint::Free => o.u8(0),
        Constraint::Fixed => o.u8(1),
        Constraint::PowerOfTwo => o.u8(2),
        Constraint::ZeroPinnedFirst { pruning_ratio, pow2 } => {
            o.u8(3);
            o.f64(pruning_ratio);
            o.u8(u8::from(pow2));
        }
        Constraint::UniformFixedPoint { n_bits, delta } => {
            o.u8(4);
            o.u32(n_bits as usize);
            o.f64(delta);
        }
    }
}

fn get_constraint(i: &mut In) -> CliResult<Constraint> {
    Ok(match i.u8()? {
        0 => Constraint::Free,
        1 => Constraint::Fixed,
        2 => Constraint::PowerOfTwo,
        3 => Constraint::ZeroPinnedFirst {
            pruning_ratio: i.f64()?,
            pow2: i.flag()?,
        },
        4 => Constraint::UniformFixedPoint {
            n_bits: i.u32()? as u32,
            delta: i.f64()?,
        },
        b => return Err(corrupt(format!("unknown constraint {b}"))),
    })
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    let rows = shape[0];
    let len = shape[1..].iter().product();
    if shape.len() == 1 {
        (1, rows)
    } else {
        (rows, len)
    }
}

/// Packs indices at `bits` bits each, LSB first, padding every row to a byte.
pub fn pack_indices(indices: &[u32], row_len: usize, bits: u32) -> Vec<u8> {
    let mut out = Vec::new();
    if bits == 0 || row_len == 0 {
        return out;
    }
    for row in indices.chunks(row_len) {
        let mut acc: u64 = 0;
        let mut filled = 0u32;
        for &v in row {
            acc |= (v as u64) << filled;
            filled += bits;
            while filled >= 8 {
                out.push(acc as u8);
                acc >>= 8;
                filled -= 8;
            }
        }
        if filled > 0 {
            out.push(acc as u8);
        }
    }
    out
}

/// Bytes of one packed row.
pub fn packed_row_bytes(row_len: usize, bits: u32) -> usize {
    (row_len * bits as usize).div_ceil(8)
}

fn unpack_indices(bytes: &[u8], rows: usize, row_len: usize, bits: u32) -> Vec<u32> {
    if bits == 0 {
        return vec![0; rows * row_len];
    }
    let per_row = packed_row_bytes(row_len, bits);
    let mask = (1u64 << bits) - 1;
    let mut out = Vec::with_capacity(rows * row_len);
    for r in 0..rows {
        let row = &bytes[r * per_row..(r + 1) * per_row];
        let mut acc: u64 = 0;
        let mut filled = 0u32;
        let mut next = 0;
        for _ in 0..row_len {
            while filled < bits {
                acc |= (row[next] as u64) << filled;
                next += 1;
                filled += 8;
            }
            out.push((acc & mask) as u32);
            acc >>= bits;
            filled -= bits;
        }
    }
    out
}

fn put_state(o: &mut Out, qw: &QuantizedWeight) {
    let d = qw.dict();
    put_constraint(o, d.constraint());
    o.u32(d.len());
    o.f64s(d.values());
    let shape = qw.assign().shape();
    o.shape(shape);
    let bits = WeightQuant::index_bits(d.len() as u64) as u32;
    let (_, row_len) = rows_of(shape);
    o.0.extend(pack_indices(qw.assign().indices(), row_len, bits));
}

fn get_state(i: &mut In) -> CliResult<QuantizedWeight> {
    let constraint = get_constraint(i)?;
    let k = i.u32()?;
    let values = i.f64s(k)?;
    let dict = Dictionary::new(values, constraint).map_err(|e| corrupt(e.to_string()))?;
    let shape = i.shape()?;
    let bits = WeightQuant::index_bits(k as u64) as u32;
    let (rows, row_len) = rows_of(&shape);
    let bytes = i.take(rows * packed_row_bytes(row_len, bits))?;
    let idx = unpack_indices(bytes, rows, row_len, bits);
    let assign = AssignmentTensor::new(shape, idx).map_err(|e| corrupt(e.to_string()))?;
    QuantizedWeight::new(dict, assign).map_err(|e| corrupt(e.to_string()))
}

fn put_weights(o: &mut Out, w_full: &Tensor, bias: &Tensor, quant: &Option<LayerQuant>, opts: SaveOptions) {
    o.tensor(bias);
    let strip = opts.strip_accumulators && quant.as_ref().is_some_and(|q| q.state.is_some());
    o.shape(w_full.shape());
    o.u8(u8::from(!strip));
    if !strip {
        o.f64s(w_full.data());
    }
    match quant {
        None => o.u8(0),
        Some(q) => {
            o.u8(1);
            put_scheme(o, &q.cfg);
            match &q.state {
                None => o.u8(0),
                Some(s) => {
                    o.u8(1);
                    put_state(o, s);
                }
            }
        }
    }
}

type Weights = (Tensor, Tensor, Option<LayerQuant>);

fn get_weights(i: &mut In) -> CliResult<Weights> {
    let bias = i.tensor()?;
    let shape = i.shape()?;
    let w_full = if i.flag()? {
        Some(Tensor::new(shape.clone(), i.f64s(shape.iter().product())?).map_err(|e| corrupt(e.to_string()))?)
    } else {
        None
    };
    let quant = if i.flag()? {
        let cfg = get_scheme(i)?;
        let state = if i.flag()? { Some(get_state(i)?) } else { None };
        Some(LayerQuant { cfg, state })
    } else {
        None
    };
    let w_full = match (w_full, &quant) {
        (Some(w), _) => w,
        (None, Some(LayerQuant { state: Some(s), .. })) => s.q().clone(),
        (None, _) => return Err(corrupt("stripped layer without a quantized state")),
    };
    if quant.as_ref().and_then(|q| q.state.as_ref()).is_some_and(|s| s.q().shape() != w_full.shape()) {
        return Err(corrupt("assignment shape differs from the weight shape"));
    }
    Ok((w_full, bias, quant))
}

fn put_layer(o: &mut Out, layer: &Layer, opts: SaveOptions) {
    match layer {
        Layer::Affine(l) => {
            put_post(o, &l.post);
            put_weights(o, &l.w_full, &l.bias, &l.quant, opts);
        }
        Layer::Conv2D(l) => {
            o.u32(l.stride);
            o.u32(l.padding);
            put_post(o, &l.post);
            put_weights(o, &l.w_full, &l.bias, &l.quant, opts);
        }
        Layer::BatchNorm(l) => {
            o.f64(l.eps);
            o.u8(match l.mode {
                BnMode::Traditional => 0,
                BnMode::MultiplierLess => 1,
            });
            for t in [&l.gamma, &l.beta, &l.running_mean, &l.running_var] {
                o.tensor(t);
            }
        }
        Layer::Activation(p) => put_post(o, p),
    }
}

fn layer_tag(layer: &Layer) -> u8 {
    match layer {
        Layer::Affine(_) => TAG_AFFINE,
        Layer::Conv2D(_) => TAG_CONV,
        Layer::BatchNorm(_) => TAG_BN,
        Layer::Activation(_) => TAG_ACT,
    }
}

fn get_layer(tag: u8, i: &mut In) -> CliResult<Layer> {
    let bad = |e: lutq_core::LutqError| corrupt(e.to_string());
    Ok(match tag {
        TAG_AFFINE => {
            let post = get_post(i)?;
            let (w, b, quant) = get_weights(i)?;
            let mut l = AffineLayer::new(w, b, post.activation).map_err(bad)?;
            l.post = post;
            l.quant = quant;
            Layer::Affine(l)
        }
        TAG_CONV => {
            let stride = i.u32()?;
            let padding = i.u32()?;
            let post = get_post(i)?;
            let (w, b, quant) = get_weights(i)?;
            let mut l = Conv2DLayer::new(w, b, stride, padding, post.activation).map_err(bad)?;
            l.post = post;
            l.quant = quant;
            Layer::Conv2D(l)
        }
        TAG_BN => {
            let eps = i.f64()?;
            let mode = match i.u8()? {
                0 => BnMode::Traditional,
                1 => BnMode::MultiplierLess,
                b => return Err(corrupt(format!("unknown batch norm mode {b}"))),
            };
            let gamma = i.tensor()?;
            let mut l = BatchNormLayer::new(gamma.len(), eps, mode).map_err(bad)?;
            l.gamma = gamma;
            l.beta = i.tensor()?;
            l.running_mean = i.tensor()?;
            l.running_var = i.tensor()?;
            let c = l.gamma.shape();
            if [&l.beta, &l.running_mean, &l.running_var].iter().any(|t| t.shape() != c) {
                return Err(corrupt("batch norm tensors differ in shape"));
            }
            Layer::BatchNorm(l)
        }
        TAG_ACT => Layer::Activation(get_post(i)?),
        t => return Err(corrupt(format!("unknown layer tag {t}"))),
    })
}

pub fn encode(net: &Network, opts: SaveOptions) -> Vec<u8> {
    let mut o = Out::default();
    o.0.extend_from_slice(MAGIC);
    o.u16(VERSION);
    o.u32(net.layers.len());
    for layer in &net.layers {
        let mut body = Out::default();
        put_layer(&mut body, layer, opts);
        o.u8(layer_tag(layer));
        o.u64(body.0.len() as u64);
        o.0.extend(body.0);
    }
    o.0
}

pub fn decode(bytes: &[u8]) -> CliResult<Network> {
    let mut i = In { buf: bytes, pos: 0 };
    if i.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(corrupt("missing LUTQ magic"));
    }
    let version = i.u16()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let n = i.u32()?;
    let mut layers = Vec::with_capacity(n.min(1024));
    for idx in 0..n {
        let tag = i.u8()?;
        let len = i.u64()? as usize;
        let body = i.take(len)?;
        let mut inner = In { buf: body, pos: 0 };
        layers.push(get_layer(tag, &mut inner)?);
        if inner.pos != body.len() {
            return Err(corrupt(format!("layer {idx} has {} trailing bytes", body.len() - inner.pos)));
        }
    }
    if i.pos != bytes.len() {
        return Err(corrupt("trailing bytes after the last layer"));
    }
    Ok(Network::new(layers))
}

pub fn save(net: &Network, path: &Path, opts: SaveOptions) -> CliResult<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(net, opts))?;
    Ok(())
}

pub fn load(path: &Path) -> CliResult<Network> {
    let bytes = std::fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
