//! Annotation ingestion, sentiment derivation, the `SLNF` feature file format
//! and a seeded synthetic dataset generator.

use std::collections::HashSet;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binfmt::{element_count, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar, Tensor};
use crate::postprocess::SentimentMap;
use crate::schema::Schema;

pub const FEATURE_MAGIC: &[u8; 4] = b"SLNF";
pub const FEATURE_VERSION: u16 = 1;
pub const BODY_TENSOR: &str = "body";
pub const AESTHETIC_TENSOR: &str = "aesthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::arg(format!("unknown split {other:?}"))),
        }
    }
}

/// One training/evaluation example held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T = f32> {
    pub id: String,
    pub body: Tensor<T>,
    pub aes: Tensor<T>,
    /// Multi-hot over the schema's emotions.
    pub emotions: Vec<bool>,
    /// Multi-hot over the schema's sentiments.
    pub sentiments: Vec<bool>,
}

impl<T: Scalar> Sample<T> {
    pub fn cast<U: Scalar>(&self) -> Sample<U> {
        Sample {
            id: self.id.clone(),
            body: self.body.cast(),
            aes: self.aes.cast(),
            emotions: self.emotions.clone(),
            sentiments: self.sentiments.clone(),
        }
    }
}

/// Union of the sentiments of every listed emotion, as a multi-hot vector.
pub fn derive_sentiment<S: AsRef<str>>(
    emotions: &[S],
    schema: &Schema,
    map: &SentimentMap,
) -> Result<Vec<bool>> {
    if emotions.is_empty() {
        return Err(Error::Label("empty emotion set".into()));
    }
    let mut out = vec![false; schema.num_sentiments()];
    for e in emotions {
        out[map.sentiment_of(schema.emotion_index(e.as_ref())?)] = true;
    }
    Ok(out)
}

/// Wire form of one annotation line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationLine {
    pub id: String,
    pub split: Split,
    /// Feature file holding `body` and `aesthetic`, relative to the annotation file.
    pub features: String,
    pub emotions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub features: PathBuf,
    pub emotions: Vec<String>,
    pub emotion_hot: Vec<bool>,
    pub sentiment: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Schema,
    pub map: SentimentMap,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Reads the feature files of one split, in annotation order.
    pub fn load_samples(&self, split: Split) -> Result<Vec<Sample<f32>>> {
        let records: Vec<&SampleRecord> = self.split(split).collect();
        let load = |r: &&SampleRecord| load_sample(r).map_err(|e| e.for_record(&r.id));
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            records.par_iter().map(load).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            records.iter().map(load).collect()
        }
    }
}

fn load_sample(r: &SampleRecord) -> Result<Sample<f32>> {
    let mut maps = read_feature_file(&r.features)?;
    let body = maps.take(BODY_TENSOR)?;
    let aes = maps.take(AESTHETIC_TENSOR)?;
    Ok(Sample {
        id: r.id.clone(),
        body,
        aes,
        emotions: r.emotion_hot.clone(),
        sentiments: r.sentiment.clone(),
    })
}

/// Parses a JSON-Lines annotation file. Sentiments are derived on load; blank
/// lines are skipped; ids must be unique within a split.
pub fn load_annotations(path: &Path, schema: &Schema, map: &SentimentMap) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_annotations(&text, base, schema, map)
}

pub fn parse_annotations(text: &str, base: &Path, schema: &Schema, map: &SentimentMap) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut seen: HashSet<(Split, String)> = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let a: AnnotationLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if a.emotions.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("record {:?} has no emotions", a.id),
            });
        }
        let mut emotion_hot = vec![false; schema.num_emotions()];
        for e in &a.emotions {
            let idx = schema
                .emotion_index(e)
                .map_err(|_| Error::Schema(format!("line {line}: unknown emotion {e:?}")))?;
            emotion_hot[idx] = true;
        }
        if !seen.insert((a.split, a.id.clone())) {
            return Err(Error::Validation(format!(
                "line {line}: duplicate id {:?} in split {}",
                a.id, a.split
            )));
        }
        let sentiment = derive_sentiment(&a.emotions, schema, map)?;
        records.push(SampleRecord {
            features: base.join(&a.features),
            id: a.id,
            split: a.split,
            emotions: a.emotions,
            emotion_hot,
            sentiment,
        });
    }
    Ok(Dataset {
        schema: schema.clone(),
        map: map.clone(),
        records,
    })
}

/// Named tensors read from a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub entries: Vec<(String, Tensor<f32>)>,
}

impl FeatureMaps {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor<f32>> {
        let pos = self
            .entries
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Validation(format!("feature file has no tensor {name:?}")))?;
        Ok(self.entries.remove(pos).1)
    }
}

pub fn encode_features(maps: &[(&str, &Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut w = Writer::new(FEATURE_MAGIC, FEATURE_VERSION);
    let count = u16::try_from(maps.len()).map_err(|_| Error::arg("too many tensors"))?;
    w.u16(count);
    for (name, t) in maps {
        w.str(name)?;
        w.dims(t.dims())?;
        w.f32s(t.data());
    }
    Ok(w.finish())
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMaps> {
    let (mut r, version) = Reader::open(bytes, FEATURE_MAGIC)?;
    if version != FEATURE_VERSION {
        return Err(Error::format(4, format!("unsupported feature file version {version}")));
    }
    let count = r.u16()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.offset();
        let name = r.str()?;
        let dims = r.dims()?;
        let data = r.f32s(element_count(&dims), &format!("payload of {name}"))?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(at, format!("tensor {name} holds non-finite values")));
        }
        if entries.iter().any(|(n, _): &(String, _)| *n == name) {
            return Err(Error::format(at, format!("duplicate tensor name {name:?}")));
        }
        entries.push((name, Tensor::from_vec(&dims, data)?));
    }
    r.finish()?;
    Ok(FeatureMaps { entries })
}

pub fn write_feature_file(path: &Path, maps: &[(&str, &Tensor<f32>)]) -> Result<()> {
    std::fs::write(path, encode_features(maps)?).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMaps> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

/// Shape of generated feature maps. [`Default`] matches the production head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthShape {
    pub body_channels: usize,
    pub aes_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SynthShape {
    fn default() -> Self {
        SynthShape {
            body_channels: 960,
            aes_channels: 1280,
            height: 7,
            width: 7,
        }
    }
}

pub const SYNTH_ANNOTATIONS: &str = "annotations.jsonl";

/// Writes a seeded synthetic dataset (`annotations.jsonl` plus one feature
/// file per record under `features/`) and returns it loaded.
///
/// Each emotion owns a random channel pattern per branch and a spatial bump.
/// A sample with label set `E` gets, at channel `c` and location `l`,
/// `noise + separability / sqrt(|E|) · Σ_{e∈E} pattern_e[c] · bump_e[l]`
/// with unit-variance Gaussian noise; `separability = 0` is pure noise.
pub fn synth_dataset(
    dir: &Path,
    seed: u64,
    n_per_split: usize,
    separability: f64,
    shape: SynthShape,
    schema: &Schema,
    map: &SentimentMap,
) -> Result<Dataset> {
    if n_per_split == 0 {
        return Err(Error::arg("synthetic split size must be >= 1"));
    }
    if !(separability >= 0.0 && separability.is_finite()) {
        return Err(Error::arg(format!("separability must be >= 0, got {separability}")));
    }
    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

    let mut rng = Rng::new(seed);
    let ne = schema.num_emotions();
    let (h, w) = (shape.height, shape.width);
    let loc = h * w;
    let patterns = |rng: &mut Rng, c: usize| -> Result<Vec<Vec<f64>>> {
        (0..ne)
            .map(|_| (0..c).map(|_| rng.normal(0.0, 1.0)).collect())
            .collect()
    };
    let body_pat = patterns(&mut rng, shape.body_channels)?;
    let aes_pat = patterns(&mut rng, shape.aes_channels)?;
    let bumps: Vec<Vec<f64>> = (0..ne)
        .map(|_| {
            let (cy, cx) = (rng.below(h) as f64, rng.below(w) as f64);
            (0..loc)
                .map(|l| {
                    let (y, x) = ((l / w) as f64, (l % w) as f64);
                    (-((y - cy).powi(2) + (x - cx).powi(2)) / 4.0).exp()
                })
                .collect()
        })
        .collect();

    let ann_path = dir.join(SYNTH_ANNOTATIONS);
    let mut ann = Vec::new();
    for split in Split::ALL {
        for i in 0..n_per_split {
            let id = format!("{split}-{i:05}");
            let k = 1 + rng.below(3);
            let mut labels: Vec<usize> = Vec::with_capacity(k);
            while labels.len() < k {
                let e = rng.below(ne);
                if !labels.contains(&e) {
                    labels.push(e);
                }
            }
            labels.sort_unstable();
            let amp = separability / (k as f64).sqrt();
            #[allow(clippy::needless_range_loop)]
            let mut make = |pat: &[Vec<f64>], c: usize| -> Result<Tensor<f32>> {
                let mut data = Vec::with_capacity(c * loc);
                for ch in 0..c {
                    for l in 0..loc {
                        let signal: f64 = labels.iter().map(|&e| pat[e][ch] * bumps[e][l]).sum();
                        data.push((rng.normal(0.0, 1.0)? + amp * signal) as f32);
                    }
                }
                Tensor::from_vec(&[c, h, w], data)
            };
            let body = make(&body_pat, shape.body_channels)?;
            let aes = make(&aes_pat, shape.aes_channels)?;
            let rel = format!("features/{id}.slnf");
            write_feature_file(&dir.join(&rel), &[(BODY_TENSOR, &body), (AESTHETIC_TENSOR, &aes)])?;
            let line = AnnotationLine {
                id,
                split,
                features: rel,
                emotions: labels.iter().map(|&e| schema.emotions[e].clone()).collect(),
            };
            serde_json::to_writer(&mut ann, &line).map_err(|e| Error::json("annotation", e))?;
            ann.write_all(b"\n").expect("writing to a Vec");
        }
    }
    std::fs::write(&ann_path, &ann).map_err(|e| Error::io(&ann_path, e))?;
    load_annotations(&ann_path, schema, map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn setup() -> (Schema, SentimentMap) {
        let schema = Schema::default();
        let map = SentimentMap::bundled(&schema).unwrap();
        (schema, map)
    }

    #[test]
    fn sentiment_labeling_examples() {
        let (schema, map) = setup();
        let d = |e: &[&str]| derive_sentiment(e, &schema, &map).unwrap();
        assert_eq!(d(&["Confidence", "Excitement"]), vec![true, false, false]);
        assert_eq!(d(&["Peace", "Sensitivity"]), vec![true, false, true]);
        assert_eq!(d(&["Disapproval", "Sadness"]), vec![false, true, false]);
        assert!(matches!(
            derive_sentiment(&["Joyfulness"], &schema, &map),
            Err(Error::Schema(_))
        ));
    }

    proptest! {
        #[test]
        fn derive_sentiment_of_union_is_or(a in prop::collection::vec(0usize..26, 1..5), b in prop::collection::vec(0usize..26, 1..5)) {
            let (schema, map) = setup();
            let names = |v: &[usize]| v.iter().map(|&i| schema.emotions[i].clone()).collect::<Vec<_>>();
            let (na, nb) = (names(&a), names(&b));
            let union: Vec<String> = na.iter().chain(&nb).cloned().collect();
            let sa = derive_sentiment(&na, &schema, &map).unwrap();
            let sb = derive_sentiment(&nb, &schema, &map).unwrap();
            let su = derive_sentiment(&union, &schema, &map).unwrap();
            let or: Vec<bool> = sa.iter().zip(&sb).map(|(x, y)| *x || *y).collect();
            prop_assert_eq!(su, or);
        }
    }

    #[test]
    fn parse_three_lines() {
        let (schema, map) = setup();
        let text = r#"{"id":"a","split":"train","features":"a.slnf","emotions":["Peace"]}
{"id":"b","split":"val","features":"b.slnf","emotions":["Anger","Fear"]}

{"id":"a","split":"test","features":"c.slnf","emotions":["Surprise"]}
"#;
        let ds = parse_annotations(text, Path::new("/data"), &schema, &map).unwrap();
        assert_eq!(ds.records.len(), 3);
        assert_eq!(ds.records[1].sentiment, vec![false, true, false]);
        assert_eq!(ds.records[0].features, Path::new("/data/a.slnf"));
        assert!(ds.records.iter().all(|r| r.sentiment.iter().any(|&s| s)));
    }

    #[test]
    fn annotation_errors_name_the_line() {
        let (schema, map) = setup();
        let ok = r#"{"id":"a","split":"train","features":"a.slnf","emotions":["Peace"]}"#;

        let empty = format!("{ok}\n{}", r#"{"id":"b","split":"train","features":"b","emotions":[]}"#);
        let err = parse_annotations(&empty, Path::new("."), &schema, &map).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let unknown = format!("{ok}\n{ok}\n{}", r#"{"id":"z","split":"val","features":"z","emotions":["Joyfulness"]}"#);
        let err = parse_annotations(&unknown, Path::new("."), &schema, &map).unwrap_err();
        // The duplicate comes first.
        assert!(matches!(err, Error::Validation(ref m) if m.contains("line 2")), "{err}");
        let unknown = format!("{ok}\n{}", r#"{"id":"z","split":"val","features":"z","emotions":["Joyfulness"]}"#);
        let err = parse_annotations(&unknown, Path::new("."), &schema, &map).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("line 2")), "{err}");

        let malformed = format!("{ok}\n{{\"id\": 3");
        assert!(matches!(
            parse_annotations(&malformed, Path::new("."), &schema, &map),
            Err(Error::Parse { line: 2, .. })
        ));
        let extra = r#"{"id":"a","split":"train","features":"a","emotions":["Peace"],"vad":[1,2,3]}"#;
        assert!(matches!(
            parse_annotations(extra, Path::new("."), &schema, &map),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    fn random_tensor(rng: &mut Rng, dims: &[usize]) -> Tensor<f32> {
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.normal(0.0, 1.0).unwrap() as f32).collect()).unwrap()
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(12);
        let body = random_tensor(&mut rng, &[960, 7, 7]);
        let aes = random_tensor(&mut rng, &[1280, 7, 7]);
        let path = dir.path().join("x.slnf");
        write_feature_file(&path, &[(BODY_TENSOR, &body), (AESTHETIC_TENSOR, &aes)]).unwrap();
        let maps = read_feature_file(&path).unwrap();
        assert_eq!(maps.get(BODY_TENSOR), Some(&body));
        assert_eq!(maps.get(AESTHETIC_TENSOR), Some(&aes));
        let bytes = std::fs::read(&path).unwrap();
        let again = encode_features(&[(BODY_TENSOR, &body), (AESTHETIC_TENSOR, &aes)]).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn feature_file_rejects_short_payload() {
        let mut rng = Rng::new(1);
        let body = random_tensor(&mut rng, &[960, 7, 7]);
        let bytes = encode_features(&[(BODY_TENSOR, &body)]).unwrap();
        let mut short = bytes[..bytes.len() - 4 - 40].to_vec();
        let crc = crc32fast::hash(&short);
        short.extend_from_slice(&crc.to_le_bytes());
        let err = decode_features(&short).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("truncated"));

        let mut bad_crc = bytes.clone();
        let n = bad_crc.len();
        bad_crc[n - 1] ^= 1;
        assert!(matches!(decode_features(&bad_crc), Err(Error::Format { .. })));

        let mut bad_magic = bytes;
        bad_magic[3] = b'M';
        assert!(matches!(decode_features(&bad_magic), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn synth_is_deterministic() {
        let (schema, map) = setup();
        let shape = SynthShape {
            body_channels: 6,
            aes_channels: 5,
            height: 3,
            width: 3,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let da = synth_dataset(a.path(), 7, 4, 2.0, shape, &schema, &map).unwrap();
        synth_dataset(b.path(), 7, 4, 2.0, shape, &schema, &map).unwrap();
        assert_eq!(da.records.len(), 12);
        for r in &da.records {
            let rel = r.features.strip_prefix(a.path()).unwrap();
            assert_eq!(std::fs::read(&r.features).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
            assert!((1..=3).contains(&r.emotions.len()));
        }
        assert_eq!(
            std::fs::read(a.path().join(SYNTH_ANNOTATIONS)).unwrap(),
            std::fs::read(b.path().join(SYNTH_ANNOTATIONS)).unwrap()
        );
        let train = da.load_samples(Split::Train).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(train[0].body.dims(), &[6, 3, 3]);
    }
}
