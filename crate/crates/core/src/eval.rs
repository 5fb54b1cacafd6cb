//! Average precision, per-class and mean AP, and evaluation reports.
//!
//! AP is the non-interpolated variant: items are ranked by descending score
//! (ties broken by ascending sample index) and precision is averaged over the
//! ranks of the positive items. Classes without positives in the evaluated
//! split are excluded from the mean and listed by name.

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{predict, HeadModel, Topology};
use crate::postprocess::{Prediction, SentimentMap, DEFAULT_SENTIMENT_THRESHOLD, DEFAULT_TOP_K};
use crate::quantize::ModelSizes;

pub const AP_VARIANT: &str = "non-interpolated";

pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores against {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(Error::UndefinedAp);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(acc / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub name: String,
    pub positives: usize,
    /// `None` when the class has no positives in the split.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalOptions {
    pub boost: bool,
    pub top_k: usize,
    pub sentiment_threshold: f32,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            boost: false,
            top_k: DEFAULT_TOP_K,
            sentiment_threshold: DEFAULT_SENTIMENT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub ap_variant: &'static str,
    pub options: EvalOptions,
    pub topology: Topology,
    pub sample_count: usize,
    pub emotion_ap: Vec<ClassAp>,
    pub mean_ap: f64,
    pub excluded_classes: Vec<String>,
    /// Sentiment AP is always computed on unboosted scores. Empty without the
    /// sentiment head.
    pub sentiment_ap: Vec<ClassAp>,
    pub model: ModelSizes,
}

fn class_aps(names: &[String], scores: &[Vec<f32>], labels: &[&[bool]]) -> Result<Vec<ClassAp>> {
    names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let s: Vec<f64> = scores.iter().map(|row| row[c] as f64).collect();
            let y: Vec<bool> = labels.iter().map(|row| row[c]).collect();
            let positives = y.iter().filter(|&&v| v).count();
            let ap = match average_precision(&s, &y) {
                Ok(ap) => Some(ap),
                Err(Error::UndefinedAp) => None,
                Err(e) => return Err(e),
            };
            Ok(ClassAp {
                name: name.clone(),
                positives,
                ap,
            })
        })
        .collect()
}

fn predictions(model: &dyn HeadModel, samples: &[Sample<f32>]) -> Result<Vec<Prediction>> {
    let run = |s: &Sample<f32>| -> Result<Prediction> {
        let logits = model.forward(&s.body, &s.aes).map_err(|e| e.for_record(&s.id))?;
        Ok(predict(&logits))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        samples.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        samples.iter().map(run).collect()
    }
}

fn mean_of(aps: &[ClassAp]) -> Result<f64> {
    let defined: Vec<f64> = aps.iter().filter_map(|c| c.ap).collect();
    if defined.is_empty() {
        return Err(Error::Validation("no emotion class has a positive sample in this split".into()));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Runs the head on every sample and scores it. With `opts.boost` the emotion
/// AP is computed on boosted scores.
pub fn evaluate(
    model: &dyn HeadModel,
    samples: &[Sample<f32>],
    opts: EvalOptions,
    map: &SentimentMap,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::arg("cannot evaluate an empty split"));
    }
    let mut preds = predictions(model, samples)?;
    if opts.boost {
        for (p, s) in preds.iter_mut().zip(samples) {
            p.apply_boost(map, opts.top_k, opts.sentiment_threshold)
                .map_err(|e| e.for_record(&s.id))?;
        }
    }
    let schema = model.schema();
    let emo_scores: Vec<Vec<f32>> = preds.iter().map(|p| p.final_emotion_scores().to_vec()).collect();
    let emo_labels: Vec<&[bool]> = samples.iter().map(|s| s.emotions.as_slice()).collect();
    let emotion_ap = class_aps(&schema.emotions, &emo_scores, &emo_labels)?;
    let mean_ap = mean_of(&emotion_ap)?;
    let sentiment_ap = if model.topology().sentiment {
        let scores: Vec<Vec<f32>> = preds.iter().map(|p| p.sentiment_scores.clone()).collect();
        let labels: Vec<&[bool]> = samples.iter().map(|s| s.sentiments.as_slice()).collect();
        class_aps(&schema.sentiments, &scores, &labels)?
    } else {
        Vec::new()
    };
    Ok(EvalReport {
        ap_variant: AP_VARIANT,
        options: opts,
        topology: model.topology(),
        sample_count: samples.len(),
        excluded_classes: emotion_ap
            .iter()
            .filter(|c| c.ap.is_none())
            .map(|c| c.name.clone())
            .collect(),
        emotion_ap,
        mean_ap,
        sentiment_ap,
        model: model.sizes()?,
    })
}

/// Unboosted emotion mean AP; used for checkpoint selection during training.
pub fn mean_ap(model: &dyn HeadModel, samples: &[Sample<f32>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::arg("cannot evaluate an empty split"));
    }
    let preds = predictions(model, samples)?;
    let scores: Vec<Vec<f32>> = preds.into_iter().map(|p| p.emotion_scores).collect();
    let labels: Vec<&[bool]> = samples.iter().map(|s| s.emotions.as_slice()).collect();
    mean_of(&class_aps(&model.schema().emotions, &scores, &labels)?)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let fmt_ap = |ap: Option<f64>| ap.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
        let width = self
            .emotion_ap
            .iter()
            .chain(&self.sentiment_ap)
            .map(|c| c.name.len())
            .max()
            .unwrap_or(5)
            .max(9);
        let _ = writeln!(
            out,
            "topology {}  boost {}  samples {}  AP {}",
            self.topology.label(),
            if self.options.boost { "on" } else { "off" },
            self.sample_count,
            self.ap_variant
        );
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>8}", "emotion", "positives", "AP");
        for c in &self.emotion_ap {
            let _ = writeln!(out, "{:<width$}  {:>9}  {:>8}", c.name, c.positives, fmt_ap(c.ap));
        }
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>8.4}", "mean", "", self.mean_ap);
        if !self.sentiment_ap.is_empty() {
            let _ = writeln!(out, "{:<width$}  {:>9}  {:>8}", "sentiment", "positives", "AP");
            for c in &self.sentiment_ap {
                let _ = writeln!(out, "{:<width$}  {:>9}  {:>8}", c.name, c.positives, fmt_ap(c.ap));
            }
        }
        let m = &self.model;
        let _ = writeln!(
            out,
            "params {}  fp32 payload {} B  fp32 file {} B",
            m.param_count, m.fp32.payload_bytes, m.fp32.file_bytes
        );
        if let Some(q) = &m.quantized {
            let _ = writeln!(out, "int8 payload {} B  int8 file {} B", q.payload_bytes, q.file_bytes);
        }
        out
    }
}
