//! Post-training int8 weight quantization with simulated-quantization inference.
//!
//! Each dense weight matrix gets one asymmetric affine map
//! `x ≈ (q − zero_point) · scale`, `q ∈ [−128, 127]`. The quantized range is
//! `[min(x, 0), max(x, 0)]` so zero is always representable, which keeps the
//! zero point inside the int8 range and bounds the round-trip error by
//! `scale / 2` for every element. Biases and attention parameters stay fp32.

use std::path::Path;

use serde::Serialize;

use crate::binfmt::{element_count, Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{
    decode_model, encode_model, head_forward, read_schema, read_topology, write_schema, HeadModel, HeadParams, Logits,
    Topology,
};
use crate::numerics::Tensor;
use crate::schema::Schema;

pub const QUANT_MAGIC: &[u8; 4] = b"SLNQ";
pub const QUANT_VERSION: u16 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_I8: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub dims: Vec<usize>,
    pub data: Vec<i8>,
    pub scale: f32,
    pub zero_point: i32,
}

pub fn quantize_tensor(x: &Tensor<f32>) -> QuantizedTensor {
    let (lo, hi) = x
        .data()
        .iter()
        .fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    let (scale, zero_point) = if hi == lo {
        (1.0f32, 0i32)
    } else {
        let range = hi - lo;
        let mut scale = (range / 255.0) as f32;
        // Never let rounding shrink the grid below the data range.
        if (scale as f64) * 255.0 < range {
            scale = f32::from_bits(scale.to_bits() + 1);
        }
        let zp = (-128.0 - lo / scale as f64).round().clamp(-128.0, 127.0) as i32;
        (scale, zp)
    };
    let s = scale as f64;
    let data = x
        .data()
        .iter()
        .map(|&v| (v as f64 / s + zero_point as f64).round().clamp(-128.0, 127.0) as i8)
        .collect();
    QuantizedTensor {
        dims: x.dims().to_vec(),
        data,
        scale,
        zero_point,
    }
}

pub fn dequantize_tensor(q: &QuantizedTensor) -> Tensor<f32> {
    let s = q.scale as f64;
    let data = q
        .data
        .iter()
        .map(|&v| ((v as i32 - q.zero_point) as f64 * s) as f32)
        .collect();
    Tensor::from_vec(&q.dims, data).expect("quantized tensor keeps its dims")
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    I8(QuantizedTensor),
}

impl StoredTensor {
    pub fn len(&self) -> usize {
        match self {
            StoredTensor::F32(t) => t.len(),
            StoredTensor::I8(q) => q.data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn payload_bytes(&self) -> usize {
        match self {
            StoredTensor::F32(t) => 4 * t.len(),
            StoredTensor::I8(q) => q.data.len(),
        }
    }
}

/// Head with int8 dense weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub topology: Topology,
    pub schema: Schema,
    pub tensors: Vec<(String, StoredTensor)>,
}

fn is_quantized_slot(name: &str) -> bool {
    name.ends_with(".w") && !name.contains("_attn")
}

pub fn quantize_model(p: &HeadParams<f32>) -> QuantizedModel {
    let tensors = p
        .tensors()
        .into_iter()
        .map(|(name, t)| {
            let stored = if is_quantized_slot(name) {
                StoredTensor::I8(quantize_tensor(t))
            } else {
                StoredTensor::F32(t.clone())
            };
            (name.to_string(), stored)
        })
        .collect();
    QuantizedModel {
        topology: p.topology,
        schema: p.schema.clone(),
        tensors,
    }
}

impl QuantizedModel {
    /// fp32 parameters with every int8 tensor dequantized.
    pub fn dequantize(&self) -> Result<HeadParams<f32>> {
        let named = self
            .tensors
            .iter()
            .map(|(n, t)| {
                let t = match t {
                    StoredTensor::F32(t) => t.clone(),
                    StoredTensor::I8(q) => dequantize_tensor(q),
                };
                (n.clone(), t)
            })
            .collect();
        HeadParams::from_named(self.topology, self.schema.clone(), named)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Dequantizes on the fly and runs the fp32 forward path.
pub fn quantized_forward(qm: &QuantizedModel, body: &Tensor<f32>, aes: &Tensor<f32>) -> Result<Logits<f32>> {
    head_forward(&qm.dequantize()?, body, aes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SizeReport {
    /// Bytes of parameter values only.
    pub payload_bytes: usize,
    /// Length of the serialized file.
    pub file_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelSizes {
    pub param_count: usize,
    pub fp32: SizeReport,
    pub quantized: Option<SizeReport>,
}

pub fn size_report(p: &HeadParams<f32>) -> Result<SizeReport> {
    Ok(SizeReport {
        payload_bytes: 4 * p.param_count(),
        file_bytes: encode_model(p)?.len(),
    })
}

pub fn quantized_size_report(qm: &QuantizedModel) -> Result<SizeReport> {
    Ok(SizeReport {
        payload_bytes: qm.tensors.iter().map(|(_, t)| t.payload_bytes()).sum(),
        file_bytes: encode_quantized(qm)?.len(),
    })
}

impl HeadModel for QuantizedModel {
    fn schema(&self) -> &Schema {
        &self.schema
    }
    fn topology(&self) -> Topology {
        self.topology
    }
    fn param_count(&self) -> usize {
        QuantizedModel::param_count(self)
    }
    fn forward(&self, body: &Tensor<f32>, aes: &Tensor<f32>) -> Result<Logits<f32>> {
        quantized_forward(self, body, aes)
    }
    fn sizes(&self) -> Result<ModelSizes> {
        Ok(ModelSizes {
            param_count: self.param_count(),
            fp32: size_report(&self.dequantize()?)?,
            quantized: Some(quantized_size_report(self)?),
        })
    }
}

pub fn encode_quantized(qm: &QuantizedModel) -> Result<Vec<u8>> {
    let mut w = Writer::new(QUANT_MAGIC, QUANT_VERSION);
    w.u16(qm.topology.flags());
    write_schema(&mut w, &qm.schema)?;
    w.u32(qm.tensors.len() as u32);
    for (name, t) in &qm.tensors {
        w.str(name)?;
        match t {
            StoredTensor::F32(t) => {
                w.u8(DTYPE_F32);
                w.dims(t.dims())?;
                w.f32s(t.data());
            }
            StoredTensor::I8(q) => {
                w.u8(DTYPE_I8);
                w.dims(&q.dims)?;
                w.f32(q.scale);
                w.i32(q.zero_point);
                w.i8s(&q.data);
            }
        }
    }
    Ok(w.finish())
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedModel> {
    let (mut r, version) = Reader::open(bytes, QUANT_MAGIC)?;
    if version != QUANT_VERSION {
        return Err(Error::format(4, format!("unsupported quantized model version {version}")));
    }
    let topology = read_topology(&mut r)?;
    let schema = read_schema(&mut r)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name = r.str()?;
        let at = r.offset();
        let dtype = r.u8()?;
        let dims = r.dims()?;
        let n = element_count(&dims);
        let stored = match dtype {
            DTYPE_F32 => StoredTensor::F32(Tensor::from_vec(&dims, r.f32s(n, &format!("payload of {name}"))?)?),
            DTYPE_I8 => {
                let at = r.offset();
                let scale = r.f32()?;
                let zero_point = r.i32()?;
                if !(scale > 0.0 && scale.is_finite()) || !(-128..=127).contains(&zero_point) {
                    return Err(Error::format(at, format!("invalid quantization parameters for {name}")));
                }
                let data = r.i8s(n, &format!("payload of {name}"))?;
                StoredTensor::I8(QuantizedTensor {
                    dims,
                    data,
                    scale,
                    zero_point,
                })
            }
            other => return Err(Error::format(at, format!("unknown dtype tag {other}"))),
        };
        tensors.push((name, stored));
    }
    let end = r.offset();
    r.finish()?;
    let qm = QuantizedModel {
        topology,
        schema,
        tensors,
    };
    // Validates names and shapes against the topology.
    qm.dequantize().map_err(|e| Error::format(end, e.to_string()))?;
    Ok(qm)
}

pub fn save_quantized(qm: &QuantizedModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_quantized(qm)?).map_err(|e| Error::io(path, e))
}

pub fn load_quantized(path: &Path) -> Result<QuantizedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_quantized(&bytes)
}

/// Loads either an fp32 (`SLNM`) or an int8 (`SLNQ`) head, chosen by the
/// file's magic bytes.
pub fn load_head(path: &Path) -> Result<Box<dyn HeadModel>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_head(&bytes)
}

pub fn decode_head(bytes: &[u8]) -> Result<Box<dyn HeadModel>> {
    if bytes.starts_with(QUANT_MAGIC) {
        Ok(Box::new(decode_quantized(bytes)?))
    } else {
        Ok(Box::new(decode_model(bytes)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{predict, LayerDims};
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn bound_holds(x: &Tensor<f32>, q: &QuantizedTensor) -> bool {
        let d = dequantize_tensor(q);
        let half = q.scale as f64 / 2.0;
        x.data()
            .iter()
            .zip(d.data())
            .all(|(&a, &b)| (a as f64 - b as f64).abs() <= half + f32::EPSILON as f64 * (a.abs() as f64))
    }

    #[test]
    fn zero_tensor_is_exact() {
        let x = Tensor::<f32>::zeros(&[4, 3]);
        let q = quantize_tensor(&x);
        assert_eq!(q.scale, 1.0);
        assert_eq!(dequantize_tensor(&q), x);
    }

    #[test]
    fn constant_tensor_recovers_value() {
        for c in [3.0f32, -0.37, 1e-3, 250.0] {
            let x = Tensor::from_vec(&[5], vec![c; 5]).unwrap();
            let q = quantize_tensor(&x);
            let d = dequantize_tensor(&q);
            for &v in d.data() {
                assert!((v - c).abs() <= c.abs() * 1e-6, "{v} vs {c}");
            }
        }
    }

    #[test]
    fn plus_minus_one() {
        let x = Tensor::from_vec(&[2], vec![-1.0f32, 1.0]).unwrap();
        let q = quantize_tensor(&x);
        let d = dequantize_tensor(&q);
        let max_err = x
            .data()
            .iter()
            .zip(d.data())
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= q.scale as f64 / 2.0, "{max_err}");
        assert!((q.scale as f64 - 2.0 / 255.0).abs() < 1e-9);
    }

    #[test]
    fn requantization_keeps_codes() {
        let mut rng = Rng::new(9);
        let x = Tensor::from_vec(&[64], (0..64).map(|_| rng.uniform(-3.0, 3.0).unwrap() as f32).collect()).unwrap();
        let q1 = quantize_tensor(&x);
        let q2 = quantize_tensor(&dequantize_tensor(&q1));
        assert_eq!(q2.data, q1.data);
        assert_eq!(q2.zero_point, q1.zero_point);
    }

    #[test]
    fn model_round_trip_and_sizes() {
        let mut rng = Rng::new(42);
        let dims = LayerDims {
            body_channels: 12,
            aes_channels: 10,
            branch: 8,
            fuse1: 8,
            fuse2: 6,
            trunk: 5,
        };
        let p = HeadParams::<f32>::init(Topology::FULL, dims, Schema::default(), &mut rng).unwrap();
        let qm = quantize_model(&p);
        let bytes = encode_quantized(&qm).unwrap();
        let back = decode_quantized(&bytes).unwrap();
        assert_eq!(back, qm);
        assert_eq!(encode_quantized(&back).unwrap(), bytes);

        let rep = quantized_size_report(&qm).unwrap();
        assert_eq!(rep.file_bytes, bytes.len());
        let n_w: usize = p
            .tensors()
            .iter()
            .filter(|(n, _)| is_quantized_slot(n))
            .map(|(_, t)| t.len())
            .sum();
        assert_eq!(rep.payload_bytes, n_w + 4 * (p.param_count() - n_w));
        let fp = size_report(&p).unwrap();
        assert_eq!(fp.payload_bytes, 4 * p.param_count());
        assert_eq!(fp.file_bytes, encode_model(&p).unwrap().len());

        assert_eq!(decode_head(&bytes).unwrap().sizes().unwrap().quantized, Some(rep));
        let fp_bytes = encode_model(&p).unwrap();
        assert_eq!(decode_head(&fp_bytes).unwrap().sizes().unwrap().quantized, None);

        let mut bad = bytes.clone();
        bad[0] = b'Q';
        assert!(matches!(decode_quantized(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn zero_weight_model_is_unchanged() {
        let p = HeadParams::<f32>::zeros(Topology::FULL, LayerDims::default(), Schema::default()).unwrap();
        let qm = quantize_model(&p);
        let mut rng = Rng::new(3);
        let mut t = |c: usize| {
            Tensor::from_vec(&[c, 7, 7], (0..c * 49).map(|_| rng.unit() as f32).collect()).unwrap()
        };
        let (b, a) = (t(960), t(1280));
        assert_eq!(quantized_forward(&qm, &b, &a).unwrap(), head_forward(&p, &b, &a).unwrap());
        assert_eq!(predict(&quantized_forward(&qm, &b, &a).unwrap()).emotion_scores, vec![0.5; 26]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn round_trip_error_bounded(seed in any::<u64>(), n in 1usize..300, lo in -5.0f64..5.0, width in 0.0f64..10.0) {
            let mut rng = Rng::new(seed);
            let x = Tensor::from_vec(&[n], (0..n).map(|_| rng.uniform(lo, lo + width).unwrap() as f32).collect()).unwrap();
            let q = quantize_tensor(&x);
            prop_assert!((-128..=127).contains(&q.zero_point));
            prop_assert!(bound_holds(&x, &q));
        }

        #[test]
        fn grid_codes_are_stable(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let x = Tensor::from_vec(&[32], (0..32).map(|_| rng.normal(0.0, 1.0).unwrap() as f32).collect()).unwrap();
            let q1 = quantize_tensor(&x);
            let q2 = quantize_tensor(&dequantize_tensor(&q1));
            prop_assert_eq!(q2.data, q1.data);
        }
    }
}
