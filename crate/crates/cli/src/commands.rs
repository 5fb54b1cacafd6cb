use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use selinet_core::data::{
    load_annotations, read_feature_file, synth_dataset, Dataset, Split, SynthShape, AESTHETIC_TENSOR,
    BODY_TENSOR, SYNTH_ANNOTATIONS,
};
use selinet_core::eval::{evaluate, EvalOptions};
use selinet_core::model::{load_model, predict as predict_scores, save_model};
use selinet_core::postprocess::{topk, DEFAULT_SENTIMENT_THRESHOLD, DEFAULT_TOP_K};
use selinet_core::quantize::{load_head, quantize_model, quantized_size_report, save_quantized, size_report};
use selinet_core::training::{self, gradcheck as run_gradcheck, TrainConfig};
use selinet_core::{HeadModel, Schema, SentimentMap, Tensor, Topology};

/// Accepts an annotation file or a directory holding `annotations.jsonl`.
fn annotations_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(SYNTH_ANNOTATIONS)
    } else {
        data.to_path_buf()
    }
}

fn load_dataset(data: &Path, schema: &Schema, map: &SentimentMap) -> Result<Dataset> {
    let path = annotations_path(data);
    load_annotations(&path, schema, map).with_context(|| format!("loading annotations {}", path.display()))
}

fn load_any_model(path: &Path) -> Result<Box<dyn HeadModel>> {
    load_head(path).with_context(|| format!("loading model {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    TrainConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

pub fn train(config: &Path, data: &Path, out: &Path, history: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let schema = Schema::default();
    let map = SentimentMap::bundled(&schema)?;
    let ds = load_dataset(data, &schema, &map)?;
    let train_split = ds.load_samples(Split::Train)?;
    let val_split = ds.load_samples(Split::Val)?;
    let (params, hist) = training::train_with(&schema, &train_split, &val_split, &cfg, |r| {
        eprintln!(
            "epoch {:>3}  lr {:.1e}  loss {:.6}  val mAP {:.4}",
            r.epoch, r.lr, r.train_loss.total, r.val_mean_ap
        );
    })?;
    save_model(&params, out).with_context(|| format!("writing model {}", out.display()))?;
    if let Some(path) = history {
        write_json(path, &hist)?;
    }
    let best = &hist.epochs[hist.best_epoch];
    eprintln!(
        "kept epoch {} (val mAP {:.4}); wrote {}",
        best.epoch,
        best.val_mean_ap,
        out.display()
    );
    Ok(())
}

pub fn eval(
    model: &Path,
    data: &Path,
    split: Split,
    report: &Path,
    boost: bool,
    map: Option<&Path>,
) -> Result<()> {
    let model = load_any_model(model)?;
    let schema = model.schema().clone();
    let map = match map {
        Some(path) => {
            SentimentMap::load(path, &schema).with_context(|| format!("loading sentiment map {}", path.display()))?
        }
        None => SentimentMap::bundled(&schema)?,
    };
    let ds = load_dataset(data, &schema, &map)?;
    let samples = ds.load_samples(split)?;
    let opts = EvalOptions {
        boost,
        ..EvalOptions::default()
    };
    let rep = evaluate(model.as_ref(), &samples, opts, &map)?;
    emit(&rep.to_table())?;
    std::fs::write(report, rep.to_json() + "\n").with_context(|| format!("writing {}", report.display()))
}

pub fn predict(model: &Path, features: &Path, boost: bool, top: Option<usize>) -> Result<()> {
    let model = load_any_model(model)?;
    let schema = model.schema().clone();
    let mut maps = read_feature_file(features).with_context(|| format!("reading {}", features.display()))?;
    let body = maps.take(BODY_TENSOR)?;
    let aes = match maps.take(AESTHETIC_TENSOR) {
        Ok(t) => t,
        // The aesthetics tensor is never read without the aesthetics branch.
        Err(_) if !model.topology().aesthetics => Tensor::zeros(&[1, 1, 1]),
        Err(e) => return Err(e.into()),
    };
    let logits = model.forward(&body, &aes)?;
    let mut pred = predict_scores(&logits);
    if boost {
        let map = SentimentMap::bundled(&schema)?;
        pred.apply_boost(&map, DEFAULT_TOP_K, DEFAULT_SENTIMENT_THRESHOLD)?;
    }
    let scores = pred.final_emotion_scores();
    let k = top.unwrap_or(scores.len()).min(scores.len());
    let emotions: Vec<_> = topk(scores, k)?
        .into_iter()
        .map(|i| json!({ "name": schema.emotions[i], "score": scores[i], "raw": pred.emotion_scores[i] }))
        .collect();
    let sentiments: Vec<_> = pred
        .sentiment_scores
        .iter()
        .zip(&schema.sentiments)
        .map(|(s, name)| json!({ "name": name, "score": s }))
        .collect();
    let out = json!({
        "features": features.display().to_string(),
        "topology": model.topology().label(),
        "boosted": boost,
        "emotions": emotions,
        "sentiments": sentiments,
    });
    emit(&(serde_json::to_string_pretty(&out)? + "\n"))?;
    Ok(())
}

pub fn quantize(model: &Path, out: &Path, report: Option<Option<&Path>>) -> Result<()> {
    let params = load_model(model).with_context(|| format!("loading fp32 model {}", model.display()))?;
    let qm = quantize_model(&params);
    save_quantized(&qm, out).with_context(|| format!("writing {}", out.display()))?;
    let fp32 = size_report(&params)?;
    let int8 = quantized_size_report(&qm)?;
    let reduction = 1.0 - int8.payload_bytes as f64 / fp32.payload_bytes as f64;
    eprintln!(
        "wrote {}: payload {} -> {} bytes ({:.1}% smaller)",
        out.display(),
        fp32.payload_bytes,
        int8.payload_bytes,
        100.0 * reduction
    );
    let rep = json!({
        "param_count": params.param_count(),
        "fp32": fp32,
        "quantized": int8,
        "payload_reduction": reduction,
        "file_reduction": 1.0 - int8.file_bytes as f64 / fp32.file_bytes as f64,
    });
    match report {
        None => {}
        Some(None) => emit(&(serde_json::to_string_pretty(&rep)? + "\n"))?,
        Some(Some(path)) => write_json(path, &rep)?,
    }
    Ok(())
}

pub fn gradcheck(seed: u64, topology: Topology) -> Result<()> {
    let rep = run_gradcheck(seed, topology)?;
    emit(&(serde_json::to_string_pretty(&rep)? + "\n"))?;
    if let Some(f) = &rep.failing {
        bail!(
            "gradient check failed at {}[{}]: analytic {:e}, numeric {:e}, relative error {:.3e}",
            f.tensor,
            f.index,
            f.analytic,
            f.numeric,
            f.rel_error
        );
    }
    eprintln!(
        "gradient check passed: {} coordinates, max relative error {:.3e}",
        rep.checked, rep.max_rel_error
    );
    Ok(())
}

pub fn synth(out: &Path, n: usize, seed: u64, separability: f64) -> Result<()> {
    let schema = Schema::default();
    let map = SentimentMap::bundled(&schema)?;
    let ds = synth_dataset(out, seed, n, separability, SynthShape::default(), &schema, &map)
        .with_context(|| format!("writing synthetic data to {}", out.display()))?;
    eprintln!(
        "wrote {} samples ({n} per split) to {}",
        ds.records.len(),
        out.join(SYNTH_ANNOTATIONS).display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    aesthetics: bool,
    attention: bool,
    sentiment: bool,
    boost: bool,
    params: usize,
    best_epoch: usize,
    val_mean_ap: f64,
    test_mean_ap: f64,
}

pub fn ablate(config: &Path, data: &Path) -> Result<()> {
    let base = load_config(config)?;
    let schema = Schema::default();
    let map = SentimentMap::bundled(&schema)?;
    let ds = load_dataset(data, &schema, &map)?;
    let train_split = ds.load_samples(Split::Train)?;
    let val_split = ds.load_samples(Split::Val)?;
    let test_split = ds.load_samples(Split::Test)?;

    let mut rows = Vec::new();
    for topology in Topology::ablation_rows() {
        let cfg = TrainConfig {
            topology,
            ..base.clone()
        };
        eprintln!("training {}", topology.label());
        let (params, hist) = training::train(&schema, &train_split, &val_split, &cfg)?;
        let boosts: &[bool] = if topology == Topology::FULL { &[false, true] } else { &[false] };
        for &boost in boosts {
            let opts = EvalOptions {
                boost,
                ..EvalOptions::default()
            };
            let rep = evaluate(&params, &test_split, opts, &map)?;
            rows.push(AblationRow {
                aesthetics: topology.aesthetics,
                attention: topology.attention,
                sentiment: topology.sentiment,
                boost,
                params: params.param_count(),
                best_epoch: hist.best_epoch,
                val_mean_ap: hist.epochs[hist.best_epoch].val_mean_ap,
                test_mean_ap: rep.mean_ap,
            });
        }
    }
    emit(&ablation_table(&rows))?;
    Ok(())
}

fn ablation_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "yes" } else { "no" };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10}  {:<9}  {:<9}  {:<5}  {:>9}  {:>10}  {:>7}  {:>8}",
        "aesthetics", "attention", "sentiment", "boost", "params", "best epoch", "val mAP", "test mAP"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10}  {:<9}  {:<9}  {:<5}  {:>9}  {:>10}  {:>7.4}  {:>8.4}",
            mark(r.aesthetics),
            mark(r.attention),
            mark(r.sentiment),
            mark(r.boost),
            r.params,
            r.best_epoch,
            r.val_mean_ap,
            r.test_mean_ap
        );
    }
    out
}

pub fn inspect(model: &Path) -> Result<()> {
    let m = load_any_model(model)?;
    let sizes = m.sizes()?;
    let out = json!({
        "path": model.display().to_string(),
        "format": if sizes.quantized.is_some() { "int8" } else { "fp32" },
        "topology": m.topology(),
        "emotions": m.schema().emotions,
        "sentiments": m.schema().sentiments,
        "param_count": m.param_count(),
        "sizes": sizes,
    });
    emit(&(serde_json::to_string_pretty(&out)? + "\n"))?;
    Ok(())
}
