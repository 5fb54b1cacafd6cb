//! Browser bindings for three small interactive views of the head:
//! attention pooling over a painted 7×7 grid, sentiment boosting of emotion
//! scores, and int8 round-trip error on a user-shaped weight vector.
//!
//! Every export is a plain function over slices, so the same code is tested
//! natively and called from JavaScript.

use wasm_bindgen::prelude::*;

use selinet_core::model::{attention_pool, attention_weights, AttentionPool};
use selinet_core::postprocess::{boost, SentimentMap};
use selinet_core::quantize::{dequantize_tensor, quantize_tensor};
use selinet_core::{Schema, Tensor};

pub const GRID: usize = 7;
const CELLS: usize = GRID * GRID;
/// Channel 0 carries the painted salience; the rest hold a fixed gradient so
/// the pooled vector has something besides the salience to average.
const CHANNELS: usize = 3;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn feature_map(cells: &[f32]) -> Result<Tensor<f32>, JsError> {
    if cells.len() != CELLS {
        return Err(js_err(format!("expected {CELLS} cells, got {}", cells.len())));
    }
    let mut data = Vec::with_capacity(CHANNELS * CELLS);
    data.extend_from_slice(cells);
    data.extend((0..CELLS).map(|l| (l % GRID) as f32 / (GRID - 1) as f32));
    data.extend((0..CELLS).map(|l| (l / GRID) as f32 / (GRID - 1) as f32));
    Tensor::from_vec(&[CHANNELS, GRID, GRID], data).map_err(js_err)
}

/// Scorer that looks only at the salience channel, scaled by `sharpness`.
fn salience_pool(sharpness: f32) -> AttentionPool<f32> {
    let mut p = AttentionPool::zeros(CHANNELS);
    p.w.data_mut()[0] = sharpness;
    p
}

/// Attention weights (49, row-major) for a painted salience grid. At
/// sharpness 0 every location gets 1/49; larger values concentrate the
/// weight on the brightest cells.
#[wasm_bindgen]
pub fn attention_heatmap(cells: &[f32], sharpness: f32) -> Result<Vec<f32>, JsError> {
    attention_weights(&feature_map(cells)?, &salience_pool(sharpness)).map_err(js_err)
}

/// Attention-pooled `[salience, column, row]`: the weighted centre of
/// attention on the grid plus the salience it collected.
#[wasm_bindgen]
pub fn attention_pooled(cells: &[f32], sharpness: f32) -> Result<Vec<f32>, JsError> {
    attention_pool(&feature_map(cells)?, &salience_pool(sharpness)).map_err(js_err)
}

#[wasm_bindgen]
pub fn emotion_names() -> Vec<String> {
    Schema::default().emotions
}

#[wasm_bindgen]
pub fn sentiment_names() -> Vec<String> {
    Schema::default().sentiments
}

/// Sentiment index of every emotion under the bundled mapping.
#[wasm_bindgen]
pub fn emotion_sentiments() -> Result<Vec<u32>, JsError> {
    let schema = Schema::default();
    let map = SentimentMap::bundled(&schema).map_err(js_err)?;
    Ok((0..schema.num_emotions()).map(|i| map.sentiment_of(i) as u32).collect())
}

/// Boosted emotion scores under the bundled emotion→sentiment mapping.
#[wasm_bindgen]
pub fn boost_scores(emotions: &[f32], sentiments: &[f32], k: usize, threshold: f32) -> Result<Vec<f32>, JsError> {
    let map = SentimentMap::bundled(&Schema::default()).map_err(js_err)?;
    boost(emotions, sentiments, &map, k, threshold).map_err(js_err)
}

/// Weights in a bell shape plus one outlier: `n` values from a smooth
/// deterministic sequence spread over `±spread`, with the last replaced by
/// `outlier`. Widening the range with the outlier coarsens the grid for all.
#[wasm_bindgen]
pub fn sample_weights(n: usize, spread: f32, outlier: f32) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n)
        .map(|i| {
            // Inverse of a logistic CDF at evenly spaced quantiles.
            let q = (i as f32 + 0.5) / n as f32;
            spread * (q / (1.0 - q)).ln() / 4.0
        })
        .collect();
    if let Some(last) = v.last_mut() {
        *last = outlier;
    }
    v
}

/// Int8 round trip of `values`: `[scale, zero_point, max_abs_error,
/// dequantized...]`.
#[wasm_bindgen]
pub fn quantize_roundtrip(values: &[f32]) -> Result<Vec<f32>, JsError> {
    let t = Tensor::from_vec(&[values.len()], values.to_vec()).map_err(js_err)?;
    let q = quantize_tensor(&t);
    let back = dequantize_tensor(&q);
    let max_err = values
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    let mut out = vec![q.scale, q.zero_point as f32, max_err];
    out.extend_from_slice(back.data());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_sharpness_gives_uniform_attention() {
        let cells: Vec<f32> = (0..CELLS).map(|i| (i % 5) as f32 / 4.0).collect();
        let a = attention_heatmap(&cells, 0.0).unwrap();
        assert!(a.iter().all(|&x| (x - 1.0 / 49.0).abs() < 1e-7));
        let pooled = attention_pooled(&cells, 0.0).unwrap();
        assert!((pooled[1] - 0.5).abs() < 1e-6 && (pooled[2] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn sharp_attention_finds_the_bright_cell() {
        let mut cells = vec![0.0f32; CELLS];
        cells[2 * GRID + 5] = 1.0;
        let a = attention_heatmap(&cells, 20.0).unwrap();
        assert!(a[2 * GRID + 5] > 0.99);
        assert!((a.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        let pooled = attention_pooled(&cells, 20.0).unwrap();
        assert!((pooled[1] - 5.0 / 6.0).abs() < 1e-2);
        assert!((pooled[2] - 2.0 / 6.0).abs() < 1e-2);
    }

    #[test]
    fn boost_uses_bundled_map() {
        let names = emotion_names();
        let sentiments_of = emotion_sentiments().unwrap();
        assert_eq!(names.len(), 26);
        assert_eq!(sentiment_names(), ["positive", "negative", "neutral"]);
        let mut e = vec![0.1f32; 26];
        e[0] = 0.9;
        let mut s = vec![0.0f32; 3];
        s[sentiments_of[0] as usize] = 0.8;
        let b = boost_scores(&e, &s, 5, 0.5).unwrap();
        assert!((b[0] - 1.0 / (1.0 + (-1.7f32).exp())).abs() < 1e-6);
        let untouched = (1..26).filter(|&i| b[i] == e[i]).count();
        assert!(untouched >= 21);
        assert_eq!(boost_scores(&e, &[0.0; 3], 5, 0.5).unwrap(), e);
    }

    #[test]
    fn quantize_roundtrip_layout_and_bound() {
        let w = sample_weights(200, 0.2, 1.5);
        assert_eq!(w.len(), 200);
        assert_eq!(w[199], 1.5);
        let r = quantize_roundtrip(&w).unwrap();
        assert_eq!(r.len(), 203);
        let (scale, max_err) = (r[0], r[2]);
        assert!(max_err <= scale / 2.0 * (1.0 + 1e-5));
        let tighter = quantize_roundtrip(&sample_weights(200, 0.2, 0.0)).unwrap();
        assert!(tighter[0] < scale);
    }
}
