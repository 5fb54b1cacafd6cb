//! The two-branch multitask head: attention-pooled body and aesthetics
//! feature maps, a fusion stack, and emotion/sentiment output layers.
//!
//! ```text
//! body 960×H×W ──attn pool──▶ dense 960→512 relu ─┐
//!                                                 ├─ concat 1024 ─▶ dense 512 relu ─▶ dense 256 relu ─┬─▶ dense 128 relu ─▶ dense 26  (emotion logits)
//! aes 1280×H×W ──attn pool──▶ dense 1280→512 relu ┘                                                   └─▶ dense 128 relu ─▶ dense 3   (sentiment logits)
//! ```
//!
//! Attention pooling scores each spatial location vector `x_l` with
//! `w·x_l + b`, softmaxes the scores over locations, and returns the
//! resulting convex combination of location vectors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt::{element_count, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::{affine_into, dot, relu, sigmoid, softmax_in_place, Rng, Scalar, Tensor};
use crate::postprocess::Prediction;
use crate::quantize::{size_report, ModelSizes};
use crate::schema::Schema;

pub const MODEL_MAGIC: &[u8; 4] = b"SLNM";
pub const MODEL_VERSION: u16 = 1;

/// Ablation switches. The body branch and emotion head are always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Topology {
    pub aesthetics: bool,
    /// When off, location vectors are mean-pooled instead.
    pub attention: bool,
    pub sentiment: bool,
}

impl Default for Topology {
    fn default() -> Self {
        Topology::FULL
    }
}

impl Topology {
    pub const FULL: Topology = Topology {
        aesthetics: true,
        attention: true,
        sentiment: true,
    };

    const AESTHETICS_BIT: u16 = 1;
    const ATTENTION_BIT: u16 = 1 << 1;
    const SENTIMENT_BIT: u16 = 1 << 2;

    pub fn flags(self) -> u16 {
        let mut f = 0;
        if self.aesthetics {
            f |= Self::AESTHETICS_BIT;
        }
        if self.attention {
            f |= Self::ATTENTION_BIT;
        }
        if self.sentiment {
            f |= Self::SENTIMENT_BIT;
        }
        f
    }

    pub fn from_flags(flags: u16) -> Option<Self> {
        let known = Self::AESTHETICS_BIT | Self::ATTENTION_BIT | Self::SENTIMENT_BIT;
        (flags & !known == 0).then_some(Topology {
            aesthetics: flags & Self::AESTHETICS_BIT != 0,
            attention: flags & Self::ATTENTION_BIT != 0,
            sentiment: flags & Self::SENTIMENT_BIT != 0,
        })
    }

    /// All eight switch combinations, full topology first.
    pub fn all() -> Vec<Topology> {
        (0..8u16)
            .rev()
            .map(|f| Topology::from_flags(f).unwrap())
            .collect()
    }

    /// The incremental configurations of the ablation grid, in table order.
    pub fn ablation_rows() -> [Topology; 4] {
        let t = |aesthetics, attention, sentiment| Topology {
            aesthetics,
            attention,
            sentiment,
        };
        [
            t(false, false, false),
            t(true, false, false),
            t(true, true, false),
            t(true, true, true),
        ]
    }

    /// Parses `full`, `body`, or a comma list drawn from
    /// `aesthetics`, `attention`, `sentiment` (`body` may appear and is implied).
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.eq_ignore_ascii_case("full") {
            return Ok(Topology::FULL);
        }
        let mut t = Topology {
            aesthetics: false,
            attention: false,
            sentiment: false,
        };
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "body" => {}
                "aesthetics" | "aes" => t.aesthetics = true,
                "attention" | "attn" => t.attention = true,
                "sentiment" | "sen" => t.sentiment = true,
                other => {
                    return Err(Error::arg(format!(
                        "unknown topology component {other:?} (expected full, body, aesthetics, attention, sentiment)"
                    )))
                }
            }
        }
        Ok(t)
    }

    pub fn label(self) -> String {
        let mut parts = vec!["body"];
        if self.aesthetics {
            parts.push("aesthetics");
        }
        if self.attention {
            parts.push("attention");
        }
        if self.sentiment {
            parts.push("sentiment");
        }
        parts.join(",")
    }
}

/// Layer widths. [`Default`] is the production head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub body_channels: usize,
    pub aes_channels: usize,
    pub branch: usize,
    pub fuse1: usize,
    pub fuse2: usize,
    pub trunk: usize,
}

impl Default for LayerDims {
    fn default() -> Self {
        LayerDims {
            body_channels: 960,
            aes_channels: 1280,
            branch: 512,
            fuse1: 512,
            fuse2: 256,
            trunk: 128,
        }
    }
}

impl LayerDims {
    fn validate(&self) -> Result<()> {
        let all = [
            self.body_channels,
            self.aes_channels,
            self.branch,
            self.fuse1,
            self.fuse2,
            self.trunk,
        ];
        if all.contains(&0) {
            return Err(Error::dim(format!("zero-width layer in {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPool<T> {
    /// Per-channel score weights, shape `[C]`.
    pub w: Tensor<T>,
    /// Score bias, shape `[1]`.
    pub b: Tensor<T>,
}

impl<T: Scalar> AttentionPool<T> {
    pub fn zeros(channels: usize) -> Self {
        AttentionPool {
            w: Tensor::zeros(&[channels]),
            b: Tensor::zeros(&[1]),
        }
    }

    pub fn channels(&self) -> usize {
        self.w.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// Row-major `[out, in]`.
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            w: Tensor::zeros(&[outputs, inputs]),
            b: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.dims()[1]
    }

    pub fn outputs(&self) -> usize {
        self.w.dims()[0]
    }

    pub(crate) fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.outputs()];
        affine_into(self.w.data(), self.b.data(), x, &mut out);
        if self.activation == Activation::Relu {
            out.iter_mut().for_each(|v| *v = relu(*v));
        }
        out
    }
}

/// Every trainable parameter of the head, plus the class schema.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub topology: Topology,
    pub schema: Schema,
    pub body_attn: Option<AttentionPool<T>>,
    pub body_dense: Dense<T>,
    pub aes_attn: Option<AttentionPool<T>>,
    pub aes_dense: Option<Dense<T>>,
    pub fuse1: Dense<T>,
    pub fuse2: Dense<T>,
    pub emo_trunk: Dense<T>,
    pub emo_out: Dense<T>,
    pub sen_trunk: Option<Dense<T>>,
    pub sen_out: Option<Dense<T>>,
}

// Canonical parameter order; shared by init, serialization and gradient checks.
macro_rules! param_list {
    ($p:expr, $($r:tt)+) => {{
        let p = $p;
        let mut v = Vec::with_capacity(20);
        if let Some(a) = $($r)+ p.body_attn {
            v.push(("body_attn.w", $($r)+ a.w));
            v.push(("body_attn.b", $($r)+ a.b));
        }
        v.push(("body_dense.w", $($r)+ p.body_dense.w));
        v.push(("body_dense.b", $($r)+ p.body_dense.b));
        if let Some(a) = $($r)+ p.aes_attn {
            v.push(("aes_attn.w", $($r)+ a.w));
            v.push(("aes_attn.b", $($r)+ a.b));
        }
        if let Some(d) = $($r)+ p.aes_dense {
            v.push(("aes_dense.w", $($r)+ d.w));
            v.push(("aes_dense.b", $($r)+ d.b));
        }
        v.push(("fuse1.w", $($r)+ p.fuse1.w));
        v.push(("fuse1.b", $($r)+ p.fuse1.b));
        v.push(("fuse2.w", $($r)+ p.fuse2.w));
        v.push(("fuse2.b", $($r)+ p.fuse2.b));
        v.push(("emo_trunk.w", $($r)+ p.emo_trunk.w));
        v.push(("emo_trunk.b", $($r)+ p.emo_trunk.b));
        v.push(("emo_out.w", $($r)+ p.emo_out.w));
        v.push(("emo_out.b", $($r)+ p.emo_out.b));
        if let Some(d) = $($r)+ p.sen_trunk {
            v.push(("sen_trunk.w", $($r)+ d.w));
            v.push(("sen_trunk.b", $($r)+ d.b));
        }
        if let Some(d) = $($r)+ p.sen_out {
            v.push(("sen_out.w", $($r)+ d.w));
            v.push(("sen_out.b", $($r)+ d.b));
        }
        v
    }};
}

impl<T: Scalar> HeadParams<T> {
    pub fn zeros(topology: Topology, dims: LayerDims, schema: Schema) -> Result<Self> {
        dims.validate()?;
        schema.validate()?;
        let relu = Activation::Relu;
        let fuse_in = dims.branch * if topology.aesthetics { 2 } else { 1 };
        let ne = schema.num_emotions();
        let ns = schema.num_sentiments();
        Ok(HeadParams {
            topology,
            body_attn: topology
                .attention
                .then(|| AttentionPool::zeros(dims.body_channels)),
            body_dense: Dense::zeros(dims.body_channels, dims.branch, relu),
            aes_attn: (topology.aesthetics && topology.attention)
                .then(|| AttentionPool::zeros(dims.aes_channels)),
            aes_dense: topology
                .aesthetics
                .then(|| Dense::zeros(dims.aes_channels, dims.branch, relu)),
            fuse1: Dense::zeros(fuse_in, dims.fuse1, relu),
            fuse2: Dense::zeros(dims.fuse1, dims.fuse2, relu),
            emo_trunk: Dense::zeros(dims.fuse2, dims.trunk, relu),
            emo_out: Dense::zeros(dims.trunk, ne, Activation::Linear),
            sen_trunk: topology
                .sentiment
                .then(|| Dense::zeros(dims.fuse2, dims.trunk, relu)),
            sen_out: topology
                .sentiment
                .then(|| Dense::zeros(dims.trunk, ns, Activation::Linear)),
            schema,
        })
    }

    /// Seeded initialization. Parameters are drawn in canonical order:
    /// dense weights ~ U(±sqrt(6/(in+out))), attention weights ~ N(0, 0.01),
    /// biases zero (no draws).
    pub fn init(topology: Topology, dims: LayerDims, schema: Schema, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(topology, dims, schema)?;
        for (name, t) in p.tensors_mut() {
            if name.ends_with(".b") {
                continue;
            }
            if name.contains("_attn") {
                for v in t.data_mut() {
                    *v = T::from_f64(rng.normal(0.0, 0.01)?);
                }
            } else {
                let (out, inp) = (t.dims()[0], t.dims()[1]);
                let a = (6.0 / (inp + out) as f64).sqrt();
                for v in t.data_mut() {
                    *v = T::from_f64(rng.uniform(-a, a)?);
                }
            }
        }
        Ok(p)
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        param_list!(self, &)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        param_list!(self, &mut)
    }

    pub fn dims(&self) -> LayerDims {
        LayerDims {
            body_channels: self.body_dense.inputs(),
            aes_channels: self.aes_dense.as_ref().map_or(0, |d| d.inputs()),
            branch: self.body_dense.outputs(),
            fuse1: self.fuse1.outputs(),
            fuse2: self.fuse2.outputs(),
            trunk: self.emo_trunk.outputs(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> HeadParams<U> {
        let attn = |a: &AttentionPool<T>| AttentionPool {
            w: a.w.cast(),
            b: a.b.cast(),
        };
        let dense = |d: &Dense<T>| Dense {
            w: d.w.cast(),
            b: d.b.cast(),
            activation: d.activation,
        };
        HeadParams {
            topology: self.topology,
            schema: self.schema.clone(),
            body_attn: self.body_attn.as_ref().map(attn),
            body_dense: dense(&self.body_dense),
            aes_attn: self.aes_attn.as_ref().map(attn),
            aes_dense: self.aes_dense.as_ref().map(dense),
            fuse1: dense(&self.fuse1),
            fuse2: dense(&self.fuse2),
            emo_trunk: dense(&self.emo_trunk),
            emo_out: dense(&self.emo_out),
            sen_trunk: self.sen_trunk.as_ref().map(dense),
            sen_out: self.sen_out.as_ref().map(dense),
        }
    }

    /// Rebuilds parameters from named tensors, checking the set of names and
    /// every shape against the topology.
    pub fn from_named(
        topology: Topology,
        schema: Schema,
        mut named: Vec<(String, Tensor<T>)>,
    ) -> Result<Self> {
        let dim_of = |named: &[(String, Tensor<T>)], name: &str, axis: usize| -> Result<usize> {
            named
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, t)| t.dims().get(axis).copied())
                .ok_or_else(|| Error::Validation(format!("missing or malformed tensor {name}")))
        };
        let dims = LayerDims {
            body_channels: dim_of(&named, "body_dense.w", 1)?,
            aes_channels: if topology.aesthetics {
                dim_of(&named, "aes_dense.w", 1)?
            } else {
                1
            },
            branch: dim_of(&named, "body_dense.w", 0)?,
            fuse1: dim_of(&named, "fuse1.w", 0)?,
            fuse2: dim_of(&named, "fuse2.w", 0)?,
            trunk: dim_of(&named, "emo_trunk.w", 0)?,
        };
        let mut p = Self::zeros(topology, dims, schema)?;
        if named.len() != p.tensors().len() {
            return Err(Error::Validation(format!(
                "expected {} tensors for topology {}, found {}",
                p.tensors().len(),
                topology.label(),
                named.len()
            )));
        }
        for (name, slot) in p.tensors_mut() {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Validation(format!("missing tensor {name}")))?;
            let (_, t) = named.swap_remove(pos);
            if t.dims() != slot.dims() {
                return Err(Error::Validation(format!(
                    "tensor {name} has dims {:?}, topology needs {:?}",
                    t.dims(),
                    slot.dims()
                )));
            }
            *slot = t;
        }
        Ok(p)
    }
}

/// Pre-sigmoid outputs. `sentiment` is empty without the sentiment head.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T> {
    pub emotion: Vec<T>,
    pub sentiment: Vec<T>,
}

fn check_feature_map<T: Scalar>(f: &Tensor<T>, channels: usize, what: &str) -> Result<usize> {
    match f.dims() {
        [c, h, w] if *c == channels && h * w >= 1 => Ok(h * w),
        d => Err(Error::dim(format!(
            "{what} feature map must be {channels}×H×W, got {d:?}"
        ))),
    }
}

/// Softmax-weighted average of the `H·W` location vectors of a `C×H×W` map.
pub fn attention_pool<T: Scalar>(f: &Tensor<T>, p: &AttentionPool<T>) -> Result<Vec<T>> {
    check_feature_map(f, p.channels(), "attention")?;
    Ok(attention_pool_trace(f.data(), p).0)
}

/// Softmax weights over the `H·W` locations, row-major.
pub fn attention_weights<T: Scalar>(f: &Tensor<T>, p: &AttentionPool<T>) -> Result<Vec<T>> {
    check_feature_map(f, p.channels(), "attention")?;
    Ok(attention_pool_trace(f.data(), p).1)
}

/// Returns the pooled vector and the attention weights over locations.
pub(crate) fn attention_pool_trace<T: Scalar>(f: &[T], p: &AttentionPool<T>) -> (Vec<T>, Vec<T>) {
    let c = p.channels();
    let l = f.len() / c;
    let mut scores = vec![T::zero(); l];
    for (ch, &wc) in p.w.data().iter().enumerate() {
        let row = &f[ch * l..(ch + 1) * l];
        for (s, &x) in scores.iter_mut().zip(row) {
            *s += wc * x;
        }
    }
    let bias = p.b.data()[0];
    scores.iter_mut().for_each(|s| *s += bias);
    softmax_in_place(&mut scores);
    let alpha = scores;
    let out = (0..c).map(|ch| dot(&alpha, &f[ch * l..(ch + 1) * l])).collect();
    (out, alpha)
}

pub(crate) fn mean_pool<T: Scalar>(f: &[T], channels: usize) -> Vec<T> {
    let l = f.len() / channels;
    let inv = T::one() / T::from_f64(l as f64);
    (0..channels)
        .map(|ch| {
            let mut acc = T::zero();
            for &x in &f[ch * l..(ch + 1) * l] {
                acc += x;
            }
            acc * inv
        })
        .collect()
}

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct Trace<T> {
    pub body_pooled: Vec<T>,
    pub body_alpha: Option<Vec<T>>,
    pub aes_pooled: Option<Vec<T>>,
    pub aes_alpha: Option<Vec<T>>,
    /// Concatenated branch outputs.
    pub fused: Vec<T>,
    pub f1: Vec<T>,
    pub f2: Vec<T>,
    pub emo_h: Vec<T>,
    pub sen_h: Option<Vec<T>>,
    pub logits: Logits<T>,
}

fn pool<T: Scalar>(f: &[T], attn: Option<&AttentionPool<T>>, channels: usize) -> (Vec<T>, Option<Vec<T>>) {
    match attn {
        Some(a) => {
            let (out, alpha) = attention_pool_trace(f, a);
            (out, Some(alpha))
        }
        None => (mean_pool(f, channels), None),
    }
}

pub(crate) fn forward_trace<T: Scalar>(
    p: &HeadParams<T>,
    body: &Tensor<T>,
    aes: &Tensor<T>,
) -> Result<Trace<T>> {
    let body_c = p.body_dense.inputs();
    check_feature_map(body, body_c, "body")?;
    let (body_pooled, body_alpha) = pool(body.data(), p.body_attn.as_ref(), body_c);
    let mut fused = p.body_dense.apply(&body_pooled);
    let (aes_pooled, aes_alpha) = match &p.aes_dense {
        Some(dense) => {
            check_feature_map(aes, dense.inputs(), "aesthetics")?;
            let (pooled, alpha) = pool(aes.data(), p.aes_attn.as_ref(), dense.inputs());
            fused.extend(dense.apply(&pooled));
            (Some(pooled), alpha)
        }
        None => (None, None),
    };

    let f1 = p.fuse1.apply(&fused);
    let f2 = p.fuse2.apply(&f1);
    let emo_h = p.emo_trunk.apply(&f2);
    let emotion = p.emo_out.apply(&emo_h);
    let (sen_h, sentiment) = match (&p.sen_trunk, &p.sen_out) {
        (Some(trunk), Some(out)) => {
            let h = trunk.apply(&f2);
            let s = out.apply(&h);
            (Some(h), s)
        }
        _ => (None, Vec::new()),
    };
    Ok(Trace {
        body_pooled,
        body_alpha,
        aes_pooled,
        aes_alpha,
        fused,
        f1,
        f2,
        emo_h,
        sen_h,
        logits: Logits { emotion, sentiment },
    })
}

/// Full forward pass. Without the aesthetics branch `aes` is not inspected.
pub fn head_forward<T: Scalar>(p: &HeadParams<T>, body: &Tensor<T>, aes: &Tensor<T>) -> Result<Logits<T>> {
    Ok(forward_trace(p, body, aes)?.logits)
}

/// Elementwise sigmoid of both heads.
pub fn predict<T: Scalar>(logits: &Logits<T>) -> Prediction {
    let s = |v: &[T]| v.iter().map(|&x| sigmoid(x).as_f64() as f32).collect();
    Prediction::new(s(&logits.emotion), s(&logits.sentiment))
}

/// Anything that maps a pair of feature maps to logits: fp32 parameters or a
/// quantized model.
pub trait HeadModel: Sync {
    fn schema(&self) -> &Schema;
    fn topology(&self) -> Topology;
    fn param_count(&self) -> usize;
    fn forward(&self, body: &Tensor<f32>, aes: &Tensor<f32>) -> Result<Logits<f32>>;
    fn sizes(&self) -> Result<ModelSizes>;
}

impl HeadModel for HeadParams<f32> {
    fn schema(&self) -> &Schema {
        &self.schema
    }
    fn topology(&self) -> Topology {
        self.topology
    }
    fn param_count(&self) -> usize {
        HeadParams::param_count(self)
    }
    fn forward(&self, body: &Tensor<f32>, aes: &Tensor<f32>) -> Result<Logits<f32>> {
        head_forward(self, body, aes)
    }
    fn sizes(&self) -> Result<ModelSizes> {
        Ok(ModelSizes {
            param_count: HeadParams::param_count(self),
            fp32: size_report(self)?,
            quantized: None,
        })
    }
}

pub(crate) fn write_schema(w: &mut Writer, schema: &Schema) -> Result<()> {
    for names in [&schema.emotions, &schema.sentiments] {
        let n = u16::try_from(names.len()).map_err(|_| Error::arg("too many class names"))?;
        w.u16(n);
        for name in names {
            w.str(name)?;
        }
    }
    Ok(())
}

pub(crate) fn read_schema(r: &mut Reader<'_>) -> Result<Schema> {
    let at = r.offset();
    let mut lists = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = r.u16()? as usize;
        let mut names = Vec::with_capacity(n);
        for _ in 0..n {
            names.push(r.str()?);
        }
        lists.push(names);
    }
    let sentiments = lists.pop().unwrap();
    let emotions = lists.pop().unwrap();
    Schema::new(emotions, sentiments).map_err(|e| Error::format(at, e.to_string()))
}

pub(crate) fn read_topology(r: &mut Reader<'_>) -> Result<Topology> {
    let at = r.offset();
    let flags = r.u16()?;
    Topology::from_flags(flags).ok_or_else(|| Error::format(at, format!("unknown topology flags {flags:#06x}")))
}

/// Serializes parameters into the `SLNM` container.
pub fn encode_model(p: &HeadParams<f32>) -> Result<Vec<u8>> {
    let mut w = Writer::new(MODEL_MAGIC, MODEL_VERSION);
    w.u16(p.topology.flags());
    write_schema(&mut w, &p.schema)?;
    let tensors = p.tensors();
    w.u32(tensors.len() as u32);
    for (name, t) in tensors {
        w.str(name)?;
        w.dims(t.dims())?;
        w.f32s(t.data());
    }
    Ok(w.finish())
}

pub fn decode_model(bytes: &[u8]) -> Result<HeadParams<f32>> {
    let (mut r, version) = Reader::open(bytes, MODEL_MAGIC)?;
    if version != MODEL_VERSION {
        return Err(Error::format(4, format!("unsupported model version {version}")));
    }
    let topology = read_topology(&mut r)?;
    let schema = read_schema(&mut r)?;
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let at = r.offset();
        let name = r.str()?;
        let dims = r.dims()?;
        let data = r.f32s(element_count(&dims), &format!("payload of {name}"))?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(at, format!("tensor {name} holds non-finite values")));
        }
        named.push((name, Tensor::from_vec(&dims, data)?));
    }
    let end = r.offset();
    r.finish()?;
    HeadParams::from_named(topology, schema, named).map_err(|e| Error::format(end, e.to_string()))
}

pub fn save_model(p: &HeadParams<f32>, path: &Path) -> Result<()> {
    let bytes = encode_model(p)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<HeadParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
