//! Central-difference check of [`backward`](super::backward) in double precision.
//!
//! Relative error per coordinate is `|a − n| / max(1e-8, |a| + |n|)` where `a`
//! is the analytic and `n` the numeric partial derivative of the batch-mean
//! total loss. Large tensors are spot-checked at randomly drawn coordinates.
//!
//! The numeric side is `(L(θ+h) − L(θ−h)) / 2h`, but each `L(θ±h) − L(θ)` is
//! evaluated in difference form: the perturbation's deviation is pushed
//! through the network from cached unperturbed activations, using exact
//! identities for ReLU, softmax and sigmoid differences. Subtracting two
//! independently rounded losses would leave a noise floor near `ε·|L| / h ≈
//! 1e-11`, which swamps the many gradient components of order 1e-8 that the
//! small off-class loss weights produce.

use std::cell::Cell;

use serde::Serialize;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{attention_pool_trace, mean_pool, Activation, Dense, HeadParams, LayerDims, Topology};
use crate::numerics::{affine_into, dot, sigmoid, Rng, Tensor};
use crate::postprocess::SentimentMap;
use crate::schema::Schema;

use super::backward::backward;
use super::loss::{dynamic_weights, label};
use super::TrainConfig;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub topology: Topology,
    pub dims: LayerDims,
    pub batch: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates checked per tensor; `None` checks every coordinate.
    pub coords_per_tensor: Option<usize>,
    /// Adds `delta` to one analytic coordinate before comparing (harness self-test).
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone)]
pub struct Fault {
    pub tensor: String,
    pub index: usize,
    pub delta: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            seed: 1,
            topology: Topology::FULL,
            dims: LayerDims::default(),
            batch: 4,
            step: 1e-6,
            tolerance: 1e-5,
            coords_per_tensor: Some(64),
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<CoordinateCheck>,
    /// First coordinate above tolerance, in canonical parameter order.
    pub failing: Option<CoordinateCheck>,
    /// Coordinates whose ±h step moves some ReLU input across zero. The loss
    /// is not differentiable there, so they are reported but not scored.
    pub kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks the production-width head for `topology` on a random batch of four.
pub fn gradcheck(seed: u64, topology: Topology) -> Result<GradCheckReport> {
    gradcheck_with(&GradCheckOptions {
        seed,
        topology,
        ..GradCheckOptions::default()
    })
}

/// Random batch with nonempty emotion sets and sentiments derived through the
/// bundled map (or the first sentiment for non-default schemas).
pub(crate) fn random_batch(
    rng: &mut Rng,
    dims: &LayerDims,
    schema: &Schema,
    n: usize,
) -> Result<Vec<Sample<f64>>> {
    let map = SentimentMap::bundled(schema).ok();
    let ne = schema.num_emotions();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut map_of = |c: usize| -> Result<Tensor<f64>> {
            let data = (0..c * 49).map(|_| rng.normal(0.0, 1.0)).collect::<Result<Vec<_>>>()?;
            Tensor::from_vec(&[c, 7, 7], data)
        };
        let body = map_of(dims.body_channels)?;
        let aes = map_of(dims.aes_channels)?;
        let mut emotions = vec![false; ne];
        for _ in 0..=rng.below(3) {
            emotions[rng.below(ne)] = true;
        }
        let mut sentiments = vec![false; schema.num_sentiments()];
        for (e, _) in emotions.iter().enumerate().filter(|(_, &on)| on) {
            sentiments[map.as_ref().map_or(0, |m| m.sentiment_of(e))] = true;
        }
        out.push(Sample {
            id: format!("gradcheck-{i}"),
            body,
            aes,
            emotions,
            sentiments,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    BodyDense,
    AesDense,
    Fuse1,
    Fuse2,
    EmoTrunk,
    EmoOut,
    SenTrunk,
    SenOut,
}

/// Where a perturbed scalar lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Site {
    Attention { aes: bool, bias: bool, index: usize },
    Dense { layer: Layer, bias: bool, index: usize },
}

impl Site {
    fn parse(name: &str, index: usize) -> Result<Site> {
        let (module, kind) = name
            .split_once('.')
            .ok_or_else(|| Error::arg(format!("bad parameter name {name}")))?;
        let bias = kind == "b";
        let layer = match module {
            "body_attn" | "aes_attn" => {
                return Ok(Site::Attention {
                    aes: module == "aes_attn",
                    bias,
                    index,
                })
            }
            "body_dense" => Layer::BodyDense,
            "aes_dense" => Layer::AesDense,
            "fuse1" => Layer::Fuse1,
            "fuse2" => Layer::Fuse2,
            "emo_trunk" => Layer::EmoTrunk,
            "emo_out" => Layer::EmoOut,
            "sen_trunk" => Layer::SenTrunk,
            "sen_out" => Layer::SenOut,
            _ => return Err(Error::arg(format!("unknown parameter {name}"))),
        };
        Ok(Site::Dense { layer, bias, index })
    }

    fn own(self, layer: Layer) -> Option<(bool, usize)> {
        match self {
            Site::Dense { layer: l, bias, index } if l == layer => Some((bias, index)),
            _ => None,
        }
    }
}

/// Input and pre-activation of a dense layer at the unperturbed point.
struct LayerBase {
    x: Vec<f64>,
    z: Vec<f64>,
}

fn layer_base(d: &Dense<f64>, x: Vec<f64>) -> (LayerBase, Vec<f64>) {
    let mut z = vec![0.0; d.outputs()];
    affine_into(d.w.data(), d.b.data(), &x, &mut z);
    let a = match d.activation {
        Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Linear => z.clone(),
    };
    (LayerBase { x, z }, a)
}

struct SampleBase {
    body_alpha: Option<Vec<f64>>,
    aes_alpha: Option<Vec<f64>>,
    layers: Vec<(Layer, LayerBase)>,
}

impl SampleBase {
    fn new(p: &HeadParams<f64>, s: &Sample<f64>) -> SampleBase {
        let pool = |f: &[f64], attn: Option<&crate::model::AttentionPool<f64>>, c: usize| match attn {
            Some(a) => {
                let (out, alpha) = attention_pool_trace(f, a);
                (out, Some(alpha))
            }
            None => (mean_pool(f, c), None),
        };
        let mut layers = Vec::with_capacity(8);
        let (pooled, body_alpha) = pool(s.body.data(), p.body_attn.as_ref(), p.body_dense.inputs());
        let (lb, mut fused) = layer_base(&p.body_dense, pooled);
        layers.push((Layer::BodyDense, lb));
        let mut aes_alpha = None;
        if let Some(dense) = &p.aes_dense {
            let (pooled, alpha) = pool(s.aes.data(), p.aes_attn.as_ref(), dense.inputs());
            let (lb, h) = layer_base(dense, pooled);
            layers.push((Layer::AesDense, lb));
            fused.extend(h);
            aes_alpha = alpha;
        }
        let mut push = |layer: Layer, d: &Dense<f64>, x: Vec<f64>| {
            let (lb, a) = layer_base(d, x);
            layers.push((layer, lb));
            a
        };
        let f1 = push(Layer::Fuse1, &p.fuse1, fused);
        let f2 = push(Layer::Fuse2, &p.fuse2, f1);
        let eh = push(Layer::EmoTrunk, &p.emo_trunk, f2.clone());
        push(Layer::EmoOut, &p.emo_out, eh);
        if let (Some(trunk), Some(out)) = (&p.sen_trunk, &p.sen_out) {
            let sh = push(Layer::SenTrunk, trunk, f2);
            push(Layer::SenOut, out, sh);
        }
        SampleBase {
            body_alpha,
            aes_alpha,
            layers,
        }
    }

    fn layer(&self, layer: Layer) -> &LayerBase {
        &self.layers.iter().find(|(l, _)| *l == layer).expect("layer present in topology").1
    }
}

fn relu_delta(z: f64, dz: f64, kink: &Cell<bool>) -> f64 {
    let moved = z + dz;
    if z > 0.0 && moved > 0.0 {
        dz
    } else if z <= 0.0 && moved <= 0.0 {
        0.0
    } else {
        kink.set(true);
        moved.max(0.0) - z.max(0.0)
    }
}

/// Output deviation of a dense layer from an input deviation and/or a
/// perturbation of one of its own parameters. `None` means exactly zero.
fn layer_delta(
    d: &Dense<f64>,
    base: &LayerBase,
    d_in: Option<&[f64]>,
    own: Option<(bool, usize)>,
    delta: f64,
    kink: &Cell<bool>,
) -> Option<Vec<f64>> {
    if d_in.is_none() && own.is_none() {
        return None;
    }
    let (n, m) = (d.inputs(), d.outputs());
    let w = d.w.data();
    let mut dz = vec![0.0; m];
    if let Some(dx) = d_in {
        for (j, &dxj) in dx.iter().enumerate() {
            if dxj == 0.0 {
                continue;
            }
            for (i, dzi) in dz.iter_mut().enumerate() {
                *dzi += w[i * n + j] * dxj;
            }
        }
    }
    match own {
        Some((false, k)) => dz[k / n] += delta * base.x[k % n],
        Some((true, i)) => dz[i] += delta,
        None => {}
    }
    Some(match d.activation {
        Activation::Linear => dz,
        Activation::Relu => dz.iter().zip(&base.z).map(|(&dz, &z)| relu_delta(z, dz, kink)).collect(),
    })
}

/// Pooled-vector deviation when every location score moves by `ds[l]`.
fn pool_delta(f: &[f64], alpha: &[f64], ds: &[f64]) -> Vec<f64> {
    let l = alpha.len();
    let e: Vec<f64> = ds.iter().map(|d| d.exp_m1()).collect();
    let zm1: f64 = alpha.iter().zip(&e).map(|(a, e)| a * e).sum();
    let da: Vec<f64> = alpha.iter().zip(&e).map(|(a, e)| a * (e - zm1) / (1.0 + zm1)).collect();
    (0..f.len() / l).map(|c| dot(&da, &f[c * l..(c + 1) * l])).collect()
}

/// `σ(z + dz) − σ(z)` without cancellation.
fn sigmoid_delta(z: f64, dz: f64) -> f64 {
    sigmoid(z + dz) * sigmoid(-z) * -(-dz).exp_m1()
}

/// Loss deviation of one head given its logit deviation.
fn head_delta(z: &[f64], dz: &[f64], y: &[bool], eps: f64, factor: f64) -> Result<f64> {
    let w = dynamic_weights(y, eps)?;
    let mut acc = 0.0;
    for (((&z, &dz), &yi), &wi) in z.iter().zip(dz).zip(y).zip(&w) {
        if dz == 0.0 {
            continue;
        }
        let ds = sigmoid_delta(z, dz);
        acc += wi * ds * (2.0 * (sigmoid(z) - label::<f64>(yi)) + ds);
    }
    Ok(factor * acc)
}

/// Finite-difference evaluator over a fixed batch.
struct Oracle<'a> {
    p: &'a HeadParams<f64>,
    batch: &'a [Sample<f64>],
    bases: Vec<SampleBase>,
    cfg: &'a TrainConfig,
}

impl<'a> Oracle<'a> {
    fn new(p: &'a HeadParams<f64>, batch: &'a [Sample<f64>], cfg: &'a TrainConfig) -> Self {
        let bases = batch.iter().map(|s| SampleBase::new(p, s)).collect();
        Oracle { p, batch, bases, cfg }
    }

    /// `L_s(θ + delta·e_site) − L_s(θ)` for one sample.
    fn loss_delta(
        &self,
        s: &Sample<f64>,
        base: &SampleBase,
        site: Site,
        delta: f64,
        kink: &Cell<bool>,
    ) -> Result<f64> {
        let p = self.p;
        let attn_delta = |aes: bool| -> Option<Vec<f64>> {
            let Site::Attention { aes: a, bias, index } = site else {
                return None;
            };
            if a != aes {
                return None;
            }
            let (f, alpha) = if aes {
                (s.aes.data(), base.aes_alpha.as_ref()?)
            } else {
                (s.body.data(), base.body_alpha.as_ref()?)
            };
            let l = alpha.len();
            let ds: Vec<f64> = if bias {
                vec![delta; l]
            } else {
                f[index * l..(index + 1) * l].iter().map(|x| delta * x).collect()
            };
            Some(pool_delta(f, alpha, &ds))
        };

        let step = |layer: Layer, d: &Dense<f64>, d_in: Option<&[f64]>| {
            layer_delta(d, base.layer(layer), d_in, site.own(layer), delta, kink)
        };
        let d_hb = step(Layer::BodyDense, &p.body_dense, attn_delta(false).as_deref());
        let d_ha = match &p.aes_dense {
            Some(dense) => step(Layer::AesDense, dense, attn_delta(true).as_deref()),
            None => None,
        };
        let d_fused = match (&d_hb, &d_ha) {
            (None, None) => None,
            _ => {
                let branch = p.body_dense.outputs();
                let mut v = d_hb.unwrap_or_else(|| vec![0.0; branch]);
                if p.aes_dense.is_some() {
                    v.extend(d_ha.unwrap_or_else(|| vec![0.0; branch]));
                }
                Some(v)
            }
        };
        let d_f1 = step(Layer::Fuse1, &p.fuse1, d_fused.as_deref());
        let d_f2 = step(Layer::Fuse2, &p.fuse2, d_f1.as_deref());
        let d_eh = step(Layer::EmoTrunk, &p.emo_trunk, d_f2.as_deref());
        let d_ez = step(Layer::EmoOut, &p.emo_out, d_eh.as_deref());

        let eps = self.cfg.eps_weight;
        let has_sentiment = p.sen_out.is_some();
        let lambda = if has_sentiment { self.cfg.lambda } else { 1.0 };
        let mut total = match d_ez {
            Some(dz) => head_delta(&base.layer(Layer::EmoOut).z, &dz, &s.emotions, eps, lambda)?,
            None => 0.0,
        };
        if let (Some(trunk), Some(out)) = (&p.sen_trunk, &p.sen_out) {
            let d_sh = step(Layer::SenTrunk, trunk, d_f2.as_deref());
            if let Some(dz) = step(Layer::SenOut, out, d_sh.as_deref()) {
                total += head_delta(&base.layer(Layer::SenOut).z, &dz, &s.sentiments, eps, 1.0 - lambda)?;
            }
        }
        Ok(total)
    }

    /// Central difference of the batch-mean loss with step `h`, and whether
    /// the step crossed a ReLU kink.
    fn partial(&self, name: &str, index: usize, h: f64) -> Result<(f64, bool)> {
        let site = Site::parse(name, index)?;
        let kink = Cell::new(false);
        let mut acc = 0.0;
        for (s, base) in self.batch.iter().zip(&self.bases) {
            acc += self.loss_delta(s, base, site, h, &kink)? - self.loss_delta(s, base, site, -h, &kink)?;
        }
        Ok((acc / (2.0 * h * self.batch.len() as f64), kink.get()))
    }
}

pub fn gradcheck_with(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = Rng::new(opts.seed);
    let schema = Schema::default();
    let params = HeadParams::<f64>::init(opts.topology, opts.dims, schema.clone(), &mut rng)?;
    let batch = random_batch(&mut rng, &opts.dims, &schema, opts.batch)?;
    let cfg = TrainConfig {
        topology: opts.topology,
        ..TrainConfig::default()
    };
    let refs: Vec<&Sample<f64>> = batch.iter().collect();
    let (_, mut grads) = backward(&refs, &params, &cfg)?;

    if let Some(f) = &opts.fault {
        if let Some((_, t)) = grads.tensors_mut().into_iter().find(|(n, _)| *n == f.tensor) {
            t.data_mut()[f.index] += f.delta;
        }
    }

    // Coordinates to visit, per tensor in canonical order.
    let mut plan: Vec<(&'static str, Vec<usize>)> = Vec::new();
    for (name, t) in params.tensors() {
        let mut idx: Vec<usize> = match opts.coords_per_tensor {
            Some(k) if k < t.len() => {
                let mut picked = Vec::with_capacity(k);
                while picked.len() < k {
                    let i = rng.below(t.len());
                    if !picked.contains(&i) {
                        picked.push(i);
                    }
                }
                picked.sort_unstable();
                picked
            }
            _ => (0..t.len()).collect(),
        };
        if let Some(f) = opts.fault.as_ref().filter(|f| f.tensor == name) {
            if !idx.contains(&f.index) {
                idx.push(f.index);
                idx.sort_unstable();
            }
        }
        plan.push((name, idx));
    }

    let mut report = GradCheckReport {
        passed: true,
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
        failing: None,
        kinks: 0,
    };
    let oracle = Oracle::new(&params, &batch, &cfg);
    for (ti, (name, coords)) in plan.iter().enumerate() {
        for &i in coords {
            let (numeric, kink) = oracle.partial(name, i, opts.step)?;
            if kink {
                report.kinks += 1;
                continue;
            }
            let analytic = grads.tensors()[ti].1.data()[i];
            let check = CoordinateCheck {
                tensor: name.to_string(),
                index: i,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            };
            report.checked += 1;
            if check.rel_error > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(check.rel_error);
                report.worst = Some(check.clone());
            }
            if check.rel_error > opts.tolerance && report.failing.is_none() {
                report.passed = false;
                report.failing = Some(check);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::backward::sample_loss;

    fn small_dims() -> LayerDims {
        LayerDims {
            body_channels: 6,
            aes_channels: 5,
            branch: 4,
            fuse1: 5,
            fuse2: 4,
            trunk: 3,
        }
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-15);
        assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn difference_form_agrees_with_direct_difference() {
        // At a large step the direct difference of two losses is accurate,
        // so both evaluations of the same central difference must agree.
        let h = 1e-3;
        for topology in Topology::all() {
            let mut rng = Rng::new(11);
            let schema = Schema::default();
            let p = HeadParams::<f64>::init(topology, small_dims(), schema.clone(), &mut rng).unwrap();
            let batch = random_batch(&mut rng, &small_dims(), &schema, 3).unwrap();
            let cfg = TrainConfig {
                topology,
                ..TrainConfig::default()
            };
            let oracle = Oracle::new(&p, &batch, &cfg);
            let loss = |q: &HeadParams<f64>| -> f64 {
                batch.iter().map(|s| sample_loss(s, q, &cfg).unwrap().total).sum::<f64>() / batch.len() as f64
            };
            for (ti, (name, t)) in p.tensors().into_iter().enumerate() {
                for i in 0..t.len().min(9) {
                    let mut q = p.clone();
                    let v = t.data()[i];
                    q.tensors_mut().swap_remove(ti).1.data_mut()[i] = v + h;
                    let up = loss(&q);
                    q.tensors_mut().swap_remove(ti).1.data_mut()[i] = v - h;
                    let down = loss(&q);
                    let direct = (up - down) / (2.0 * h);
                    let (got, kink) = oracle.partial(name, i, h).unwrap();
                    if kink {
                        continue;
                    }
                    assert!(
                        (got - direct).abs() <= 1e-10 + 1e-6 * direct.abs(),
                        "{} {name}[{i}]: {got} vs {direct}",
                        topology.label()
                    );
                }
            }
        }
    }

    #[test]
    fn every_coordinate_of_small_heads() {
        for topology in Topology::all() {
            let report = gradcheck_with(&GradCheckOptions {
                seed: 7,
                topology,
                dims: small_dims(),
                coords_per_tensor: None,
                ..GradCheckOptions::default()
            })
            .unwrap();
            let params = HeadParams::<f64>::zeros(topology, small_dims(), Schema::default()).unwrap();
            assert_eq!(report.checked + report.kinks, params.param_count());
            assert!(report.passed, "{}: {:?}", topology.label(), report.failing);
        }
    }

    #[test]
    fn production_heads_pass() {
        let no_attention = Topology {
            attention: false,
            ..Topology::FULL
        };
        for (seed, topology) in [(1, Topology::FULL), (2, Topology::FULL), (3, Topology::FULL), (1, no_attention)] {
            let report = gradcheck(seed, topology).unwrap();
            assert!(report.passed, "{} seed {seed}: {:?}", topology.label(), report.failing);
            assert!(report.max_rel_error <= 1e-5);
            assert_eq!(report.kinks, 0);
        }
    }

    #[test]
    fn injected_fault_is_located() {
        let report = gradcheck_with(&GradCheckOptions {
            dims: small_dims(),
            coords_per_tensor: Some(2),
            fault: Some(Fault {
                tensor: "fuse2.w".into(),
                index: 5,
                delta: 1e-3,
            }),
            ..GradCheckOptions::default()
        })
        .unwrap();
        assert!(!report.passed);
        let failing = report.failing.unwrap();
        assert_eq!((failing.tensor.as_str(), failing.index), ("fuse2.w", 5));
        assert!(failing.rel_error > 1e-5);
    }
}
