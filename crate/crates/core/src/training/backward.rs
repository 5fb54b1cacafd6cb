//! Reverse-mode pass through sigmoid, weighted L2, the λ mix, both heads,
//! the fusion stack, branch dense layers and attention pooling.

use serde::Serialize;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{forward_trace, Activation, AttentionPool, Dense, HeadParams};
use crate::numerics::{sigmoid, Scalar, Tensor};

use super::loss::{dynamic_weights, label, total_loss};
#[cfg(test)]
use super::loss::weighted_l2_loss;
use super::TrainConfig;

/// Partial derivatives shaped exactly like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub(crate) inner: HeadParams<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(p: &HeadParams<T>) -> Self {
        let mut inner = p.clone();
        for (_, t) in inner.tensors_mut() {
            t.fill(T::zero());
        }
        Gradients { inner }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        self.inner.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.inner.tensors_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn is_finite(&self) -> bool {
        self.inner.is_finite()
    }

    pub(crate) fn reset(&mut self) {
        for (_, t) in self.inner.tensors_mut() {
            t.fill(T::zero());
        }
    }

    pub(crate) fn add(&mut self, other: &Gradients<T>) {
        for ((_, a), (_, b)) in self.inner.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
    }

    pub(crate) fn scale(&mut self, factor: T) {
        for (_, t) in self.inner.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Per-sample or batch-mean loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub emotion: f64,
    pub sentiment: f64,
    pub total: f64,
}

/// Batch-mean loss and its exact gradient. Loss weights depend only on the
/// labels and are treated as constants.
pub fn backward<T: Scalar>(
    batch: &[&Sample<T>],
    p: &HeadParams<T>,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::arg("backward on an empty batch"));
    }
    let mut total = Gradients::zeros_like(p);
    let mut loss = LossBreakdown::default();
    let mut add = |l: LossBreakdown, g: &Gradients<T>, total: &mut Gradients<T>| {
        loss.emotion += l.emotion;
        loss.sentiment += l.sentiment;
        loss.total += l.total;
        total.add(g);
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let wave = rayon::current_num_threads().max(1).min(batch.len());
        let mut bufs: Vec<Gradients<T>> = (0..wave).map(|_| Gradients::zeros_like(p)).collect();
        for chunk in batch.chunks(wave) {
            let losses = bufs
                .par_iter_mut()
                .zip(chunk.par_iter())
                .map(|(buf, s)| {
                    buf.reset();
                    sample_backward(s, p, cfg, buf).map_err(|e| e.for_record(&s.id))
                })
                .collect::<Result<Vec<_>>>()?;
            // Reduce in ascending sample order regardless of thread count.
            for (l, g) in losses.into_iter().zip(&bufs) {
                add(l, g, &mut total);
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut buf = Gradients::zeros_like(p);
        for s in batch {
            buf.reset();
            let l = sample_backward(s, p, cfg, &mut buf).map_err(|e| e.for_record(&s.id))?;
            add(l, &buf, &mut total);
        }
    }

    let n = batch.len() as f64;
    total.scale(T::one() / T::from_f64(n));
    let mean = LossBreakdown {
        emotion: loss.emotion / n,
        sentiment: loss.sentiment / n,
        total: loss.total / n,
    };
    Ok((mean, total))
}

/// Loss of one sample. Without the sentiment head the total is the emotion loss.
#[cfg(test)]
pub(crate) fn sample_loss<T: Scalar>(
    s: &Sample<T>,
    p: &HeadParams<T>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let logits = forward_trace(p, &s.body, &s.aes)?.logits;
    let eps = T::from_f64(cfg.eps_weight);
    let scores = |z: &[T]| z.iter().map(|&v| sigmoid(v)).collect::<Vec<T>>();
    let le = weighted_l2_loss(&s.emotions, &scores(&logits.emotion), eps)?;
    if p.sen_out.is_none() {
        return Ok(LossBreakdown {
            emotion: le.as_f64(),
            sentiment: 0.0,
            total: le.as_f64(),
        });
    }
    let ls = weighted_l2_loss(&s.sentiments, &scores(&logits.sentiment), eps)?;
    let total = total_loss(le, ls, T::from_f64(cfg.lambda))?;
    Ok(LossBreakdown {
        emotion: le.as_f64(),
        sentiment: ls.as_f64(),
        total: total.as_f64(),
    })
}

/// d(weight · weighted L2)/d(logit) for each output, alongside the loss.
fn output_grad<T: Scalar>(logits: &[T], y: &[bool], eps: T, weight: T) -> Result<(T, Vec<T>)> {
    if logits.len() != y.len() {
        return Err(Error::dim(format!(
            "{} logits against {} labels",
            logits.len(),
            y.len()
        )));
    }
    let w = dynamic_weights(y, eps)?;
    let two = T::from_f64(2.0);
    let mut loss = T::zero();
    let grad = logits
        .iter()
        .zip(y)
        .zip(&w)
        .map(|((&z, &yi), &wi)| {
            let s = sigmoid(z);
            let d = s - label::<T>(yi);
            loss += d * d * wi;
            weight * two * d * wi * s * (T::one() - s)
        })
        .collect();
    Ok((loss, grad))
}

/// Accumulates one sample's (unscaled) gradient into `g` and returns its loss.
pub(crate) fn sample_backward<T: Scalar>(
    s: &Sample<T>,
    p: &HeadParams<T>,
    cfg: &TrainConfig,
    g: &mut Gradients<T>,
) -> Result<LossBreakdown> {
    let tr = forward_trace(p, &s.body, &s.aes)?;
    let eps = T::from_f64(cfg.eps_weight);
    let lambda = T::from_f64(cfg.lambda);
    let has_sentiment = p.sen_out.is_some();
    let emo_weight = if has_sentiment { lambda } else { T::one() };
    let gi = &mut g.inner;

    let (le, dz_e) = output_grad(&tr.logits.emotion, &s.emotions, eps, emo_weight)?;
    let d_emo_h = dense_backward(&p.emo_out, &tr.emo_h, &tr.logits.emotion, dz_e, &mut gi.emo_out, true);
    let mut d_f2 = dense_backward(&p.emo_trunk, &tr.f2, &tr.emo_h, d_emo_h, &mut gi.emo_trunk, true);

    let loss = match (&p.sen_trunk, &p.sen_out, &tr.sen_h) {
        (Some(trunk), Some(out), Some(sen_h)) => {
            let (gt, go) = (gi.sen_trunk.as_mut().unwrap(), gi.sen_out.as_mut().unwrap());
            let (ls, dz_s) =
                output_grad(&tr.logits.sentiment, &s.sentiments, eps, T::one() - lambda)?;
            let d_sen_h = dense_backward(out, sen_h, &tr.logits.sentiment, dz_s, go, true);
            let d = dense_backward(trunk, &tr.f2, sen_h, d_sen_h, gt, true);
            for (a, b) in d_f2.iter_mut().zip(d) {
                *a += b;
            }
            LossBreakdown {
                emotion: le.as_f64(),
                sentiment: ls.as_f64(),
                total: total_loss(le, ls, lambda)?.as_f64(),
            }
        }
        _ => LossBreakdown {
            emotion: le.as_f64(),
            sentiment: 0.0,
            total: le.as_f64(),
        },
    };

    let d_f1 = dense_backward(&p.fuse2, &tr.f1, &tr.f2, d_f2, &mut gi.fuse2, true);
    let d_fused = dense_backward(&p.fuse1, &tr.fused, &tr.f1, d_f1, &mut gi.fuse1, true);
    let branch = p.body_dense.outputs();
    let (d_body_h, d_aes_h) = d_fused.split_at(branch);

    let need_dx = p.body_attn.is_some();
    let body_h = &tr.fused[..branch];
    let d_body_pooled = dense_backward(
        &p.body_dense,
        &tr.body_pooled,
        body_h,
        d_body_h.to_vec(),
        &mut gi.body_dense,
        need_dx,
    );
    if let (Some(attn), Some(alpha)) = (&p.body_attn, &tr.body_alpha) {
        attention_backward(attn, s.body.data(), alpha, &d_body_pooled, gi.body_attn.as_mut().unwrap());
    }

    if let (Some(dense), Some(pooled)) = (&p.aes_dense, &tr.aes_pooled) {
        let need_dx = p.aes_attn.is_some();
        let aes_h = &tr.fused[branch..];
        let d_aes_pooled = dense_backward(
            dense,
            pooled,
            aes_h,
            d_aes_h.to_vec(),
            gi.aes_dense.as_mut().unwrap(),
            need_dx,
        );
        if let (Some(attn), Some(alpha)) = (&p.aes_attn, &tr.aes_alpha) {
            attention_backward(attn, s.aes.data(), alpha, &d_aes_pooled, gi.aes_attn.as_mut().unwrap());
        }
    }
    Ok(loss)
}

/// Backprop through `y = act(W x + b)` given `dy = dL/dy`. Accumulates into
/// `g` and returns `dL/dx` (empty when `need_dx` is false).
fn dense_backward<T: Scalar>(
    d: &Dense<T>,
    x: &[T],
    y: &[T],
    mut dy: Vec<T>,
    g: &mut Dense<T>,
    need_dx: bool,
) -> Vec<T> {
    if d.activation == Activation::Relu {
        for (dv, &yv) in dy.iter_mut().zip(y) {
            if yv <= T::zero() {
                *dv = T::zero();
            }
        }
    }
    let n = x.len();
    let gw = g.w.data_mut();
    for (i, &dz) in dy.iter().enumerate() {
        if dz == T::zero() {
            continue;
        }
        for (gwij, &xj) in gw[i * n..(i + 1) * n].iter_mut().zip(x) {
            *gwij += dz * xj;
        }
    }
    for (gb, &dz) in g.b.data_mut().iter_mut().zip(&dy) {
        *gb += dz;
    }
    if !need_dx {
        return Vec::new();
    }
    let w = d.w.data();
    let mut dx = vec![T::zero(); n];
    for (i, &dz) in dy.iter().enumerate() {
        if dz == T::zero() {
            continue;
        }
        for (dxj, &wij) in dx.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *dxj += wij * dz;
        }
    }
    dx
}

/// Backprop through softmax-weighted location pooling into `w` and `b`.
fn attention_backward<T: Scalar>(
    p: &AttentionPool<T>,
    f: &[T],
    alpha: &[T],
    d_out: &[T],
    g: &mut AttentionPool<T>,
) {
    let c = p.channels();
    let l = alpha.len();
    // dL/dα_l = Σ_c dout_c F[c, l]
    let mut d_alpha = vec![T::zero(); l];
    for (ch, &dc) in d_out.iter().enumerate().take(c) {
        for (da, &x) in d_alpha.iter_mut().zip(&f[ch * l..(ch + 1) * l]) {
            *da += dc * x;
        }
    }
    let mut mean = T::zero();
    for (&a, &da) in alpha.iter().zip(&d_alpha) {
        mean += a * da;
    }
    // Softmax Jacobian: de_l = α_l (dα_l - Σ_k α_k dα_k)
    let de: Vec<T> = alpha.iter().zip(&d_alpha).map(|(&a, &da)| a * (da - mean)).collect();
    let gw = g.w.data_mut();
    for (ch, gwc) in gw.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (&e, &x) in de.iter().zip(&f[ch * l..(ch + 1) * l]) {
            acc += e * x;
        }
        *gwc += acc;
    }
    let mut db = T::zero();
    for &e in &de {
        db += e;
    }
    g.b.data_mut()[0] += db;
}
