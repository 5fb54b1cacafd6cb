//! Sentiment-guided boosting of emotion confidences, plus top-k and
//! threshold helpers.
//!
//! Boosting rule: among the `k` highest emotion scores, an emotion `i` whose
//! mapped sentiment `j` scores at least `sentiment_threshold` is replaced by
//! `sigmoid(E_i + S_j)`. Both `E` and `S` are post-sigmoid confidences, so a
//! boosted score always lands in `[0.5, 1)`; note this can lower a score that
//! was already above `sigmoid(E_i + S_j)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::sigmoid;
use crate::schema::Schema;

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_SENTIMENT_THRESHOLD: f32 = 0.5;

const BUNDLED_MAP: &str = include_str!("../data/sentiment_map.json");

/// Total function from emotion index to sentiment index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentimentMap {
    targets: Vec<usize>,
    num_sentiments: usize,
}

impl SentimentMap {
    pub fn from_indices(targets: Vec<usize>, num_sentiments: usize) -> Result<Self> {
        if let Some(&bad) = targets.iter().find(|&&t| t >= num_sentiments) {
            return Err(Error::Schema(format!("sentiment index {bad} out of range")));
        }
        Ok(SentimentMap {
            targets,
            num_sentiments,
        })
    }

    /// Parses `{emotion name: sentiment name}` and checks it is total over `schema`.
    pub fn from_json(text: &str, schema: &Schema) -> Result<Self> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| Error::json("sentiment map", e))?;
        for name in raw.keys() {
            schema.emotion_index(name)?;
        }
        let mut targets = Vec::with_capacity(schema.num_emotions());
        for emotion in &schema.emotions {
            let sentiment = raw.get(emotion).ok_or_else(|| {
                Error::Schema(format!("sentiment map has no entry for emotion {emotion:?}"))
            })?;
            targets.push(schema.sentiment_index(sentiment)?);
        }
        Self::from_indices(targets, schema.num_sentiments())
    }

    pub fn load(path: &Path, schema: &Schema) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, schema)
    }

    /// The mapping shipped with the crate, defined over the default EMOTIC schema.
    pub fn bundled(schema: &Schema) -> Result<Self> {
        Self::from_json(BUNDLED_MAP, schema)
    }

    pub fn to_json(&self, schema: &Schema) -> String {
        let obj: BTreeMap<&str, &str> = schema
            .emotions
            .iter()
            .zip(&self.targets)
            .map(|(e, &s)| (e.as_str(), schema.sentiments[s].as_str()))
            .collect();
        serde_json::to_string_pretty(&obj).expect("string map serializes")
    }

    pub fn sentiment_of(&self, emotion: usize) -> usize {
        self.targets[emotion]
    }

    pub fn num_emotions(&self) -> usize {
        self.targets.len()
    }

    pub fn num_sentiments(&self) -> usize {
        self.num_sentiments
    }
}

/// Indices of the `k` largest scores, descending; ties go to the lower index.
pub fn topk(scores: &[f32], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::arg(format!(
            "k={k} must be in 1..={}",
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Multi-hot decision vector: 1 where `score >= tau`.
pub fn threshold_predict(scores: &[f32], tau: f32) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= tau)).collect()
}

pub fn boost(
    emotion_scores: &[f32],
    sentiment_scores: &[f32],
    map: &SentimentMap,
    k: usize,
    sentiment_threshold: f32,
) -> Result<Vec<f32>> {
    if emotion_scores.len() != map.num_emotions() || sentiment_scores.len() != map.num_sentiments()
    {
        return Err(Error::dim(format!(
            "boost expects {} emotion and {} sentiment scores, got {} and {}",
            map.num_emotions(),
            map.num_sentiments(),
            emotion_scores.len(),
            sentiment_scores.len()
        )));
    }
    let mut out = emotion_scores.to_vec();
    for i in topk(emotion_scores, k)? {
        let s = sentiment_scores[map.sentiment_of(i)];
        if s >= sentiment_threshold {
            out[i] = sigmoid(emotion_scores[i] + s);
        }
    }
    Ok(out)
}

/// Sigmoid confidences for both heads. `boosted` is filled at most once.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub emotion_scores: Vec<f32>,
    /// Empty when the model was built without the sentiment head.
    pub sentiment_scores: Vec<f32>,
    boosted: Option<Vec<f32>>,
}

impl Prediction {
    pub fn new(emotion_scores: Vec<f32>, sentiment_scores: Vec<f32>) -> Self {
        Prediction {
            emotion_scores,
            sentiment_scores,
            boosted: None,
        }
    }

    pub fn boosted(&self) -> Option<&[f32]> {
        self.boosted.as_deref()
    }

    /// Boosted scores when boosting ran, raw emotion scores otherwise.
    pub fn final_emotion_scores(&self) -> &[f32] {
        self.boosted.as_deref().unwrap_or(&self.emotion_scores)
    }

    pub fn apply_boost(&mut self, map: &SentimentMap, k: usize, threshold: f32) -> Result<&[f32]> {
        if self.boosted.is_some() {
            return Err(Error::arg("prediction has already been boosted"));
        }
        if self.sentiment_scores.is_empty() {
            return Err(Error::arg("boosting needs sentiment scores; the sentiment head is disabled"));
        }
        let b = boost(&self.emotion_scores, &self.sentiment_scores, map, k, threshold)?;
        Ok(self.boosted.insert(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn default_map() -> (Schema, SentimentMap) {
        let schema = Schema::default();
        let map = SentimentMap::bundled(&schema).unwrap();
        (schema, map)
    }

    #[test]
    fn bundled_map_matches_labeling_examples() {
        let (schema, map) = default_map();
        let s = |e: &str| map.sentiment_of(schema.emotion_index(e).unwrap());
        assert_eq!(s("Confidence"), 0);
        assert_eq!(s("Excitement"), 0);
        assert_eq!(s("Disapproval"), 1);
        assert_eq!(s("Sadness"), 1);
        let mut peace_sens = [s("Peace"), s("Sensitivity")];
        peace_sens.sort();
        assert_eq!(peace_sens, [0, 2]);
    }

    #[test]
    fn map_json_round_trip() {
        let (schema, map) = default_map();
        let again = SentimentMap::from_json(&map.to_json(&schema), &schema).unwrap();
        assert_eq!(map, again);
    }

    #[test]
    fn map_must_be_total_and_known() {
        let schema = Schema::default();
        let mut obj: BTreeMap<String, String> = serde_json::from_str(BUNDLED_MAP).unwrap();
        obj.remove("Yearning");
        let text = serde_json::to_string(&obj).unwrap();
        let err = SentimentMap::from_json(&text, &schema).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("Yearning")), "{err}");

        obj.insert("Yearning".into(), "neutral".into());
        obj.insert("Joyfulness".into(), "positive".into());
        let text = serde_json::to_string(&obj).unwrap();
        assert!(matches!(SentimentMap::from_json(&text, &schema), Err(Error::Schema(_))));

        obj.remove("Joyfulness");
        obj.insert("Peace".into(), "ecstatic".into());
        let text = serde_json::to_string(&obj).unwrap();
        assert!(matches!(SentimentMap::from_json(&text, &schema), Err(Error::Schema(_))));
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk(&[0.1, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
        assert_eq!(topk(&[0.3; 5], 3).unwrap(), vec![0, 1, 2]);
        assert!(matches!(topk(&[0.1, 0.2], 3), Err(Error::Argument(_))));
        assert!(topk(&[0.1], 0).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_predict(&[0.5], 0.5), vec![1]);
        assert_eq!(threshold_predict(&[0.0, 0.2, 1.0], 0.0), vec![1, 1, 1]);
        assert_eq!(threshold_predict(&[0.0, 0.2, 0.999], 1.0), vec![0, 0, 0]);
    }

    #[test]
    fn boost_below_threshold_is_identity() {
        let (_, map) = default_map();
        let e = vec![0.0f32; 26];
        let out = boost(&e, &[0.0; 3], &map, 5, 0.5).unwrap();
        assert_eq!(out, e);
    }

    #[test]
    fn boost_hand_values() {
        let (schema, map) = default_map();
        let conf = schema.emotion_index("Confidence").unwrap();
        let e = vec![0.0f32; 26];
        let out = boost(&e, &[0.5, 0.0, 0.0], &map, 26, 0.5).unwrap();
        assert!((out[conf] - 0.622_459_3).abs() < 1e-6);

        let mut e = vec![0.1f32; 26];
        e[conf] = 0.9;
        let out = boost(&e, &[0.9, 0.0, 0.0], &map, 5, 0.5).unwrap();
        assert!((out[conf] - 0.858_148_9).abs() < 1e-6);
        assert!(out[conf] < 0.9, "boosting lowered a high score");
    }

    #[test]
    fn boost_argument_checks() {
        let (_, map) = default_map();
        assert!(matches!(
            boost(&[0.5; 26], &[0.5; 3], &map, 0, 0.5),
            Err(Error::Argument(_))
        ));
        assert!(boost(&[0.5; 26], &[0.5; 3], &map, 27, 0.5).is_err());
        assert!(matches!(
            boost(&[0.5; 25], &[0.5; 3], &map, 5, 0.5),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn prediction_boosts_once() {
        let (_, map) = default_map();
        let mut p = Prediction::new(vec![0.4; 26], vec![0.9, 0.9, 0.9]);
        assert_eq!(p.final_emotion_scores(), &[0.4; 26][..]);
        p.apply_boost(&map, 5, 0.5).unwrap();
        assert!(p.apply_boost(&map, 5, 0.5).is_err());
        assert_eq!(p.final_emotion_scores().iter().filter(|&&s| s != 0.4).count(), 5);

        let mut no_sent = Prediction::new(vec![0.4; 26], vec![]);
        assert!(no_sent.apply_boost(&map, 5, 0.5).is_err());
    }

    fn scores(rng: &mut Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.unit() as f32).collect()
    }

    proptest! {
        #[test]
        fn topk_matches_sort_oracle(seed in any::<u64>(), n in 1usize..=26, kk in 0usize..26) {
            let mut rng = Rng::new(seed);
            // Coarse values so ties actually occur.
            let s: Vec<f32> = (0..n).map(|_| (rng.below(6) as f32) / 5.0).collect();
            let k = kk % n + 1;
            let mut pairs: Vec<(f32, usize)> = s.iter().copied().zip(0..).collect();
            // Exhaustive selection: repeatedly take the max, lowest index on ties.
            let mut oracle = Vec::new();
            for _ in 0..k {
                let mut best = 0;
                for j in 1..pairs.len() {
                    if pairs[j].0 > pairs[best].0 {
                        best = j;
                    }
                }
                oracle.push(pairs.remove(best).1);
            }
            prop_assert_eq!(topk(&s, k).unwrap(), oracle);
        }

        #[test]
        fn boost_only_touches_top_k(seed in any::<u64>(), k in 1usize..=26, thr in 0.0f32..1.0) {
            let (_, map) = default_map();
            let mut rng = Rng::new(seed);
            let e = scores(&mut rng, 26);
            let s = scores(&mut rng, 3);
            let out = boost(&e, &s, &map, k, thr).unwrap();
            let top = topk(&e, k).unwrap();
            for i in 0..26 {
                if !top.contains(&i) {
                    prop_assert_eq!(out[i], e[i]);
                } else if out[i] != e[i] {
                    prop_assert!(out[i] >= 0.5 && out[i] < 1.0);
                }
            }
        }
    }
}
