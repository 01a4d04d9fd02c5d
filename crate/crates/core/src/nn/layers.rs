//! Layer definitions and their forward / straight-through backward rules.
//!
//! Batches are tensors whose leading axis is the sample index. Affine layers
//! accept `[B, I]` (trailing axes are flattened); convolutions and batch
//! normalization over channels use `[B, C, H, W]`.

use crate::error::{LutqError, Result};
use crate::quant::pow2::split_pow2;
use crate::quant::{lutq_quantize, quantize_pow2_fixed, round_pow2, QuantizedWeight, QuantizerConfig};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Identity,
    /// Softmax over the trailing axis of a `[B, C]` batch.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActScheme {
    None,
    /// Uniform grid `{k · r / (2^n - 1)}` on `[0, r]`.
    Fp,
    /// `{0} ∪ {2^j ≤ r}` with `2^n` exponent levels.
    Pow2,
}

/// Activation quantizer applied after a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ActQuantConfig {
    pub n_bits: u32,
    pub scheme: ActScheme,
    /// Power-of-two range `r`. `None` until calibrated.
    pub range_r: Option<f64>,
}

impl ActQuantConfig {
    pub fn fp(n_bits: u32) -> Self {
        Self {
            n_bits,
            scheme: ActScheme::Fp,
            range_r: None,
        }
    }

    pub fn pow2(n_bits: u32) -> Self {
        Self {
            n_bits,
            scheme: ActScheme::Pow2,
            range_r: None,
        }
    }

    pub fn with_range(mut self, r: f64) -> Self {
        self.range_r = Some(r);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=31).contains(&self.n_bits) {
            return Err(LutqError::Argument(format!(
                "activation bits must lie in 1..=31, got {}",
                self.n_bits
            )));
        }
        if let Some(r) = self.range_r {
            if !crate::quant::is_pow2(r) || r < 0.0 {
                return Err(LutqError::Argument(format!(
                    "activation range must be a positive power of two, got {r}"
                )));
            }
        }
        Ok(())
    }

    fn range(&self) -> Result<f64> {
        self.range_r
            .ok_or_else(|| LutqError::State("activation range not calibrated".into()))
    }

    /// Quantizes one non-negative activation.
    pub fn quantize(&self, v: f64) -> Result<f64> {
        let r = self.range()?;
        match self.scheme {
            ActScheme::None => Ok(v),
            ActScheme::Fp => {
                let levels = ((1u64 << self.n_bits) - 1) as f64;
                let delta = r / levels;
                let code = (v / delta + 0.5).floor().clamp(0.0, levels);
                Ok(code * delta)
            }
            ActScheme::Pow2 => {
                if v <= 0.0 {
                    return Ok(0.0);
                }
                let (_, m) = split_pow2(r);
                quantize_pow2_fixed(v, self.n_bits + 1, m)
            }
        }
    }
}

/// Activation function followed by an optional activation quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct PostOp {
    pub activation: Activation,
    pub act_quant: Option<ActQuantConfig>,
}

impl PostOp {
    pub fn new(activation: Activation) -> Self {
        Self {
            activation,
            act_quant: None,
        }
    }

    pub fn with_quant(mut self, q: ActQuantConfig) -> Self {
        self.act_quant = Some(q);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(q) = &self.act_quant {
            q.validate()?;
            if self.activation != Activation::ReLU && q.scheme != ActScheme::None {
                return Err(LutqError::Argument(
                    "activation quantization is only supported after ReLU".into(),
                ));
            }
        }
        Ok(())
    }

    fn quantizing(&self) -> Option<&ActQuantConfig> {
        self.act_quant
            .as_ref()
            .filter(|q| q.scheme != ActScheme::None)
    }

    /// Applies the activation, then the quantizer. The cache keeps the
    /// pre-activation and the unquantized activation.
    pub fn apply(&self, z: Tensor) -> Result<(Tensor, PostCache)> {
        self.validate()?;
        let act = match self.activation {
            Activation::Identity => z.clone(),
            Activation::ReLU => z.map(|v| v.max(0.0))?,
            Activation::Softmax => softmax_rows(&z)?,
        };
        let out = match self.quantizing() {
            Some(q) => {
                let data = act
                    .data()
                    .iter()
                    .map(|&v| q.quantize(v))
                    .collect::<Result<Vec<_>>>()?;
                Tensor::new(act.shape().to_vec(), data)?
            }
            None => act.clone(),
        };
        Ok((out, PostCache { pre: z, act }))
    }

    /// Clipped pass-through for the quantizer, then the activation derivative.
    pub fn backward(&self, g: &Tensor, cache: &PostCache) -> Result<Tensor> {
        check_same(g, &cache.act)?;
        let g = match self.quantizing() {
            Some(q) => {
                let r = q.range()?;
                let data = g
                    .data()
                    .iter()
                    .zip(cache.act.data())
                    .map(|(&g, &a)| if (0.0..=r).contains(&a) { g } else { 0.0 })
                    .collect();
                Tensor::new(g.shape().to_vec(), data)?
            }
            None => g.clone(),
        };
        match self.activation {
            Activation::Identity => Ok(g),
            Activation::ReLU => {
                let data = g
                    .data()
                    .iter()
                    .zip(cache.pre.data())
                    .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(g.shape().to_vec(), data)
            }
            Activation::Softmax => {
                let c = cache.act.row_len();
                let mut data = Vec::with_capacity(g.len());
                for r in 0..g.rows() {
                    let (gr, pr) = (g.row(r), cache.act.row(r));
                    let dot: f64 = gr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    data.extend((0..c).map(|j| pr[j] * (gr[j] - dot)));
                }
                Tensor::new(g.shape().to_vec(), data)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostCache {
    pub pre: Tensor,
    pub act: Tensor,
}

pub(crate) fn softmax_rows(z: &Tensor) -> Result<Tensor> {
    if z.shape().len() != 2 {
        return Err(LutqError::Dimension(format!(
            "softmax expects [B, C], got {:?}",
            z.shape()
        )));
    }
    let mut data = Vec::with_capacity(z.len());
    for r in 0..z.rows() {
        let row = z.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        data.extend(exps.iter().map(|e| e / sum));
    }
    Tensor::new(z.shape().to_vec(), data)
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(LutqError::Dimension(format!(
            "gradient {:?} vs activation {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Quantization settings and the current dictionary/assignment of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerQuant {
    pub cfg: QuantizerConfig,
    pub state: Option<QuantizedWeight>,
}

impl LayerQuant {
    pub fn new(cfg: QuantizerConfig) -> Self {
        Self { cfg, state: None }
    }

    /// Re-runs `steps` k-means steps from the current full-precision weights.
    pub fn refresh(&mut self, w_full: &Tensor, steps: usize) -> Result<()> {
        let cfg = self.cfg.clone().with_steps(steps);
        let prev = self.state.take().map(QuantizedWeight::into_parts);
        self.state = Some(lutq_quantize(w_full, &cfg, prev)?);
        Ok(())
    }

    pub fn q(&self) -> Result<&Tensor> {
        self.state
            .as_ref()
            .map(QuantizedWeight::q)
            .ok_or_else(|| LutqError::State("quantized layer has no dictionary yet".into()))
    }
}

fn effective_weight<'a>(w_full: &'a Tensor, quant: &'a Option<LayerQuant>) -> Result<&'a Tensor> {
    match quant {
        Some(q) => q.q(),
        None => Ok(w_full),
    }
}

/// Fully connected layer `y = Φ(Qx + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    /// Full-precision accumulator `[O, I]`.
    pub w_full: Tensor,
    /// Full-precision bias `[O]`.
    pub bias: Tensor,
    pub quant: Option<LayerQuant>,
    pub post: PostOp,
}

impl AffineLayer {
    pub fn new(w_full: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if w_full.shape().len() != 2 || bias.shape() != [w_full.shape()[0]] {
            return Err(LutqError::Dimension(format!(
                "affine weight {:?} with bias {:?}",
                w_full.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            w_full,
            bias,
            quant: None,
            post: PostOp::new(activation),
        })
    }

    /// Uniform fan-in initialisation `U(-√(6/I), √(6/I))`, zero bias.
    pub fn init(rng: &mut Rng, inputs: usize, outputs: usize, activation: Activation) -> Result<Self> {
        let bound = (6.0 / inputs as f64).sqrt();
        let w = crate::tensor::rng_uniform(rng, &[outputs, inputs], -bound, bound)?;
        Self::new(w, Tensor::zeros(&[outputs]), activation)
    }

    pub fn inputs(&self) -> usize {
        self.w_full.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.w_full.shape()[0]
    }

    /// Weight used by the forward pass: `Q` when quantized, else `w_full`.
    pub fn weight(&self) -> Result<&Tensor> {
        effective_weight(&self.w_full, &self.quant)
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        let w = self.weight()?;
        let (o, i) = (self.outputs(), self.inputs());
        if x.shape().len() < 2 || x.row_len() != i {
            return Err(LutqError::Dimension(format!(
                "affine layer with {i} inputs fed {:?}",
                x.shape()
            )));
        }
        let b = x.rows();
        let mut z = Vec::with_capacity(b * o);
        for r in 0..b {
            let xr = x.row(r);
            for k in 0..o {
                let mut acc = 0.0;
                for (wv, xv) in w.row(k).iter().zip(xr) {
                    acc += wv * xv;
                }
                z.push(acc + self.bias.data()[k]);
            }
        }
        let (out, post) = self.post.apply(Tensor::new(vec![b, o], z)?)?;
        Ok((
            out,
            LayerCache::Dense {
                input: x.clone(),
                weight: w.clone(),
                post,
            },
        ))
    }

    fn backward(&self, g: &Tensor, cache: &LayerCache) -> Result<(Tensor, Vec<Tensor>)> {
        let LayerCache::Dense { input, weight, post } = cache else {
            return Err(LutqError::State("cache does not belong to an affine layer".into()));
        };
        let gz = self.post.backward(g, post)?;
        let (o, i) = (self.outputs(), self.inputs());
        let b = input.rows();
        let mut gw = vec![0.0; o * i];
        let mut gb = vec![0.0; o];
        let mut gx = vec![0.0; b * i];
        for r in 0..b {
            let xr = input.row(r);
            let gr = gz.row(r);
            for k in 0..o {
                let gk = gr[k];
                gb[k] += gk;
                let wr = weight.row(k);
                for j in 0..i {
                    gw[k * i + j] += gk * xr[j];
                    gx[r * i + j] += gk * wr[j];
                }
            }
        }
        Ok((
            Tensor::new(input.shape().to_vec(), gx)?,
            vec![Tensor::new(vec![o, i], gw)?, Tensor::new(vec![o], gb)?],
        ))
    }
}

/// 2-D convolution over `[B, I, H, W]` batches with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2DLayer {
    /// Full-precision accumulator `[O, I, F_h, F_w]`.
    pub w_full: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub quant: Option<LayerQuant>,
    pub post: PostOp,
}

impl Conv2DLayer {
    pub fn new(
        w_full: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Result<Self> {
        if w_full.shape().len() != 4 || bias.shape() != [w_full.shape()[0]] || stride == 0 {
            return Err(LutqError::Dimension(format!(
                "conv weight {:?} with bias {:?}, stride {stride}",
                w_full.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            w_full,
            bias,
            stride,
            padding,
            quant: None,
            post: PostOp::new(activation),
        })
    }

    pub fn init(
        rng: &mut Rng,
        inputs: usize,
        outputs: usize,
        filter: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Result<Self> {
        let fan_in = inputs * filter * filter;
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = crate::tensor::rng_uniform(rng, &[outputs, inputs, filter, filter], -bound, bound)?;
        Self::new(w, Tensor::zeros(&[outputs]), stride, padding, activation)
    }

    pub fn weight(&self) -> Result<&Tensor> {
        effective_weight(&self.w_full, &self.quant)
    }

    fn geometry(&self, x: &Tensor) -> Result<ConvGeometry> {
        let ws = self.w_full.shape();
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != ws[1] {
            return Err(LutqError::Dimension(format!(
                "conv layer with {} input maps fed {:?}",
                ws[1], xs
            )));
        }
        let (h, w) = (xs[2] + 2 * self.padding, xs[3] + 2 * self.padding);
        if h < ws[2] || w < ws[3] {
            return Err(LutqError::Dimension(format!(
                "filter {}x{} larger than padded input {h}x{w}",
                ws[2], ws[3]
            )));
        }
        Ok(ConvGeometry {
            batch: xs[0],
            ci: ws[1],
            co: ws[0],
            h: xs[2],
            w: xs[3],
            fh: ws[2],
            fw: ws[3],
            oh: (h - ws[2]) / self.stride + 1,
            ow: (w - ws[3]) / self.stride + 1,
            stride: self.stride,
            pad: self.padding,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        let wt = self.weight()?;
        let g = self.geometry(x)?;
        let mut z = vec![0.0; g.batch * g.co * g.oh * g.ow];
        let (xd, wd) = (x.data(), wt.data());
        for b in 0..g.batch {
            for o in 0..g.co {
                for y in 0..g.oh {
                    for xx in 0..g.ow {
                        let mut acc = 0.0;
                        for i in 0..g.ci {
                            for u in 0..g.fh {
                                for v in 0..g.fw {
                                    if let Some(idx) = g.input_index(b, i, y, xx, u, v) {
                                        acc += wd[((o * g.ci + i) * g.fh + u) * g.fw + v] * xd[idx];
                                    }
                                }
                            }
                        }
                        z[((b * g.co + o) * g.oh + y) * g.ow + xx] = acc + self.bias.data()[o];
                    }
                }
            }
        }
        let z = Tensor::new(vec![g.batch, g.co, g.oh, g.ow], z)?;
        let (out, post) = self.post.apply(z)?;
        Ok((
            out,
            LayerCache::Dense {
                input: x.clone(),
                weight: wt.clone(),
                post,
            },
        ))
    }

    fn backward(&self, gout: &Tensor, cache: &LayerCache) -> Result<(Tensor, Vec<Tensor>)> {
        let LayerCache::Dense { input, weight, post } = cache else {
            return Err(LutqError::State("cache does not belong to a conv layer".into()));
        };
        let gz = self.post.backward(gout, post)?;
        let g = self.geometry(input)?;
        let (xd, wd, gd) = (input.data(), weight.data(), gz.data());
        let mut gw = vec![0.0; weight.len()];
        let mut gb = vec![0.0; g.co];
        let mut gx = vec![0.0; input.len()];
        for b in 0..g.batch {
            for o in 0..g.co {
                for y in 0..g.oh {
                    for xx in 0..g.ow {
                        let gv = gd[((b * g.co + o) * g.oh + y) * g.ow + xx];
                        gb[o] += gv;
                        for i in 0..g.ci {
                            for u in 0..g.fh {
                                for v in 0..g.fw {
                                    if let Some(idx) = g.input_index(b, i, y, xx, u, v) {
                                        let wi = ((o * g.ci + i) * g.fh + u) * g.fw + v;
                                        gw[wi] += gv * xd[idx];
                                        gx[idx] += gv * wd[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((
            Tensor::new(input.shape().to_vec(), gx)?,
            vec![
                Tensor::new(weight.shape().to_vec(), gw)?,
                Tensor::new(vec![g.co], gb)?,
            ],
        ))
    }
}

struct ConvGeometry {
    batch: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    fh: usize,
    fw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    /// Flat input index read by output `(y, x)` through filter tap `(u, v)`,
    /// or `None` inside the zero padding.
    fn input_index(&self, b: usize, i: usize, y: usize, x: usize, u: usize, v: usize) -> Option<usize> {
        let r = (y * self.stride + u).checked_sub(self.pad)?;
        let c = (x * self.stride + v).checked_sub(self.pad)?;
        if r >= self.h || c >= self.w {
            return None;
        }
        Some(((b * self.ci + i) * self.h + r) * self.w + c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Traditional,
    /// Folded inference scale rounded to a power of two.
    MultiplierLess,
}

/// Batch normalization over axis 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub mode: BnMode,
}

/// Weight of the previous running estimate in each update.
pub const BN_MOMENTUM: f64 = 0.9;

impl BatchNormLayer {
    /// `γ = 1`, `β = 0`, running statistics `(0, 1)`.
    pub fn new(features: usize, eps: f64, mode: BnMode) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(LutqError::Argument(format!("epsilon must be positive, got {eps}")));
        }
        Ok(Self {
            gamma: Tensor::filled(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::filled(&[features], 1.0),
            eps,
            mode,
        })
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    fn layout(&self, x: &Tensor) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.features() {
            return Err(LutqError::Dimension(format!(
                "batch norm over {} features fed {:?}",
                self.features(),
                s
            )));
        }
        Ok((s[0], s[2..].iter().product()))
    }

    fn scale_of(&self, a: f64) -> Result<f64> {
        match self.mode {
            BnMode::Traditional => Ok(a),
            BnMode::MultiplierLess if a == 0.0 => Ok(0.0),
            BnMode::MultiplierLess => round_pow2(a),
        }
    }

    fn forward(&self, x: &Tensor, training: bool) -> Result<(Tensor, LayerCache)> {
        let (batch, spatial) = self.layout(x)?;
        let c = self.features();
        let m = (batch * spatial) as f64;
        let channel = |idx: usize| (idx / spatial) % c;
        let (mean, var) = if training {
            let mut mean = vec![0.0; c];
            for (idx, &v) in x.data().iter().enumerate() {
                mean[channel(idx)] += v;
            }
            mean.iter_mut().for_each(|v| *v /= m);
            let mut var = vec![0.0; c];
            for (idx, &v) in x.data().iter().enumerate() {
                let d = v - mean[channel(idx)];
                var[channel(idx)] += d * d;
            }
            var.iter_mut().for_each(|v| *v /= m);
            (mean, var)
        } else {
            (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            )
        };
        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        // Effective γ: the multiplier on x̂. In multiplier-less mode the
        // scale γ/σ is rounded first, so γ_eff = round(γ/σ)·σ.
        let mut gamma_eff = Vec::with_capacity(c);
        let mut offset = Vec::with_capacity(c);
        for j in 0..c {
            let a = self.gamma.data()[j] * invstd[j];
            let s = self.scale_of(a)?;
            gamma_eff.push(s / invstd[j]);
            offset.push(self.beta.data()[j] - s * mean[j]);
        }
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for (idx, &v) in x.data().iter().enumerate() {
            let j = channel(idx);
            xhat.push((v - mean[j]) * invstd[j]);
            if training {
                out.push(gamma_eff[j] * (v - mean[j]) * invstd[j] + self.beta.data()[j]);
            } else {
                out.push(gamma_eff[j] * invstd[j] * v + offset[j]);
            }
        }
        Ok((
            Tensor::new(x.shape().to_vec(), out)?,
            LayerCache::BatchNorm {
                xhat: Tensor::new(x.shape().to_vec(), xhat)?,
                invstd,
                gamma_eff,
                batch_mean: mean,
                batch_var: var,
                training,
            },
        ))
    }

    fn backward(&self, g: &Tensor, cache: &LayerCache) -> Result<(Tensor, Vec<Tensor>)> {
        let LayerCache::BatchNorm {
            xhat,
            invstd,
            gamma_eff,
            training,
            ..
        } = cache
        else {
            return Err(LutqError::State("cache does not belong to a batch norm layer".into()));
        };
        check_same(g, xhat)?;
        let (batch, spatial) = self.layout(g)?;
        let c = self.features();
        let m = (batch * spatial) as f64;
        let channel = |idx: usize| (idx / spatial) % c;
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (idx, (&gv, &xh)) in g.data().iter().zip(xhat.data()).enumerate() {
            sum_g[channel(idx)] += gv;
            sum_gx[channel(idx)] += gv * xh;
        }
        let gx: Vec<f64> = g
            .data()
            .iter()
            .zip(xhat.data())
            .enumerate()
            .map(|(idx, (&gv, &xh))| {
                let j = channel(idx);
                let k = gamma_eff[j] * invstd[j];
                if *training {
                    k / m * (m * gv - sum_g[j] - xh * sum_gx[j])
                } else {
                    k * gv
                }
            })
            .collect();
        Ok((
            Tensor::new(g.shape().to_vec(), gx)?,
            vec![Tensor::new(vec![c], sum_gx)?, Tensor::new(vec![c], sum_g)?],
        ))
    }

    /// Moves the running statistics towards the batch statistics.
    pub fn update_running(&mut self, batch_mean: &[f64], batch_var: &[f64]) -> Result<()> {
        let blend = |run: &Tensor, batch: &[f64]| {
            let data = run
                .data()
                .iter()
                .zip(batch)
                .map(|(&r, &b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b)
                .collect();
            Tensor::new(run.shape().to_vec(), data)
        };
        self.running_mean = blend(&self.running_mean, batch_mean)?;
        self.running_var = blend(&self.running_var, batch_var)?;
        Ok(())
    }
}

/// Inference-time fold `y = a·x + b` of a batch normalization layer.
///
/// `a = γ/√(VAR+ε)` and `b = β − a·E`. In multiplier-less mode `a` is rounded
/// to a power of two (zero stays zero) and the offset uses the rounded scale,
/// matching the forward pass.
pub fn bn_fold_scale(layer: &BatchNormLayer) -> Result<(Tensor, Tensor)> {
    let c = layer.features();
    let mut a = Vec::with_capacity(c);
    let mut b = Vec::with_capacity(c);
    for j in 0..c {
        let raw = layer.gamma.data()[j] / (layer.running_var.data()[j] + layer.eps).sqrt();
        let s = layer.scale_of(raw)?;
        a.push(s);
        b.push(layer.beta.data()[j] - s * layer.running_mean.data()[j]);
    }
    Ok((Tensor::new(vec![c], a)?, Tensor::new(vec![c], b)?))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Affine(AffineLayer),
    Conv2D(Conv2DLayer),
    BatchNorm(BatchNormLayer),
    Activation(PostOp),
}

/// Intermediates saved by a layer's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerCache {
    Dense {
        input: Tensor,
        weight: Tensor,
        post: PostCache,
    },
    BatchNorm {
        xhat: Tensor,
        invstd: Vec<f64>,
        gamma_eff: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        training: bool,
    },
    Activation(PostCache),
}

impl Layer {
    pub fn forward(&self, x: &Tensor, training: bool) -> Result<(Tensor, LayerCache)> {
        match self {
            Layer::Affine(l) => l.forward(x),
            Layer::Conv2D(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, training),
            Layer::Activation(p) => {
                let (out, c) = p.apply(x.clone())?;
                Ok((out, LayerCache::Activation(c)))
            }
        }
    }

    /// Returns the input gradient and the parameter gradients in
    /// [`Layer::params`] order.
    pub fn backward(&self, g: &Tensor, cache: &LayerCache) -> Result<(Tensor, Vec<Tensor>)> {
        match self {
            Layer::Affine(l) => l.backward(g, cache),
            Layer::Conv2D(l) => l.backward(g, cache),
            Layer::BatchNorm(l) => l.backward(g, cache),
            Layer::Activation(p) => match cache {
                LayerCache::Activation(c) => Ok((p.backward(g, c)?, Vec::new())),
                _ => Err(LutqError::State("cache does not belong to an activation layer".into())),
            },
        }
    }

    /// Trainable tensors: `(w_full, bias)` or `(γ, β)`.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Affine(l) => vec![&l.w_full, &l.bias],
            Layer::Conv2D(l) => vec![&l.w_full, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Activation(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Affine(l) => vec![&mut l.w_full, &mut l.bias],
            Layer::Conv2D(l) => vec![&mut l.w_full, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Activation(_) => Vec::new(),
        }
    }

    pub fn quant(&self) -> Option<&LayerQuant> {
        match self {
            Layer::Affine(l) => l.quant.as_ref(),
            Layer::Conv2D(l) => l.quant.as_ref(),
            _ => None,
        }
    }

    /// Weight tensor and quantization slot of an affine or conv layer.
    pub fn weight_slot(&mut self) -> Option<(&Tensor, &mut Option<LayerQuant>)> {
        match self {
            Layer::Affine(l) => Some((&l.w_full, &mut l.quant)),
            Layer::Conv2D(l) => Some((&l.w_full, &mut l.quant)),
            _ => None,
        }
    }

    pub fn post_mut(&mut self) -> Option<&mut PostOp> {
        match self {
            Layer::Affine(l) => Some(&mut l.post),
            Layer::Conv2D(l) => Some(&mut l.post),
            Layer::Activation(p) => Some(p),
            Layer::BatchNorm(_) => None,
        }
    }
}
