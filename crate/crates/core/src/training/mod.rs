//! Training: loss, manual backprop, plain SGD with step decay, and the epoch
//! loop that keeps the parameters of the best validation epoch.

mod backward;
pub mod gradcheck;
pub mod loss;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{HeadParams, LayerDims, Topology};
use crate::numerics::{Rng, Scalar};
use crate::schema::Schema;

pub use backward::{backward, Gradients, LossBreakdown};
pub use gradcheck::{gradcheck, gradcheck_with, GradCheckOptions, GradCheckReport};
pub use loss::{dynamic_weights, total_loss, weighted_l2_loss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub epochs: usize,
    /// Emotion share of the combined loss.
    pub lambda: f64,
    /// Loss weight of classes that are not true.
    pub eps_weight: f64,
    pub seed: u64,
    pub topology: Topology,
    pub layer_dims: LayerDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 26,
            lr0: 0.001,
            decay_factor: 0.1,
            decay_epochs: vec![15, 22],
            epochs: 25,
            lambda: 0.8,
            eps_weight: 0.0001,
            seed: 0,
            topology: Topology::FULL,
            layer_dims: LayerDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::arg(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor must be in (0, 1], got {}", self.decay_factor));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if !(self.eps_weight >= 0.0 && self.eps_weight.is_finite()) {
            return bad(format!("eps_weight must be >= 0, got {}", self.eps_weight));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::json("training config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(path.display().to_string(), source),
            other => other,
        })
    }
}

/// `p ← p − lr·g`, elementwise.
pub fn sgd_step<T: Scalar>(p: &mut HeadParams<T>, g: &Gradients<T>, lr: T) -> Result<()> {
    let params = p.tensors_mut();
    let grads = g.tensors();
    if params.len() != grads.len() {
        return Err(Error::dim("gradient topology differs from parameters"));
    }
    for ((name, t), (_, gt)) in params.into_iter().zip(grads) {
        if t.dims() != gt.dims() {
            return Err(Error::dim(format!("gradient shape mismatch for {name}")));
        }
        for (v, &d) in t.data_mut().iter_mut().zip(gt.data()) {
            *v -= lr * d;
        }
    }
    Ok(())
}

/// Step decay: `lr0 · decay_factor^(number of decay epochs ≤ epoch)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let decays = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.lr0 * cfg.decay_factor.powi(decays as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean of the pre-step batch losses.
    pub train_loss: LossBreakdown,
    pub val_mean_ap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// [`train_with`] without progress reporting.
pub fn train(
    schema: &Schema,
    train_split: &[Sample<f32>],
    val_split: &[Sample<f32>],
    cfg: &TrainConfig,
) -> Result<(HeadParams<f32>, TrainHistory)> {
    train_with(schema, train_split, val_split, cfg, |_| {})
}

/// Runs the epoch loop. Initialization, shuffling and batch partition all draw
/// from one [`Rng`] seeded with `cfg.seed`. After each epoch the validation
/// mean AP (no boosting) is computed and the best epoch's parameters are kept;
/// ties keep the earlier epoch.
pub fn train_with(
    schema: &Schema,
    train_split: &[Sample<f32>],
    val_split: &[Sample<f32>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(HeadParams<f32>, TrainHistory)> {
    cfg.validate()?;
    if train_split.is_empty() || val_split.is_empty() {
        return Err(Error::arg("training needs nonempty train and validation splits"));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut params = HeadParams::<f32>::init(cfg.topology, cfg.layer_dims, schema.clone(), &mut rng)?;
    let mut best: Option<(f64, HeadParams<f32>)> = None;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_split.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        rng.shuffle(&mut order);
        let mut sums = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample<f32>> = chunk.iter().map(|&i| &train_split[i]).collect();
            let (loss, grads) = backward(&batch, &params, cfg)?;
            let n = batch.len() as f64;
            sums.emotion += loss.emotion * n;
            sums.sentiment += loss.sentiment * n;
            sums.total += loss.total * n;
            sgd_step(&mut params, &grads, lr as f32)?;
        }
        if !params.is_finite() {
            return Err(Error::Validation(format!(
                "parameters became non-finite in epoch {epoch}; lower the learning rate"
            )));
        }
        let n = train_split.len() as f64;
        let val_mean_ap = eval::mean_ap(&params, val_split)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: LossBreakdown {
                emotion: sums.emotion / n,
                sentiment: sums.sentiment / n,
                total: sums.total / n,
            },
            val_mean_ap,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(ap, _)| val_mean_ap > *ap) {
            best = Some((val_mean_ap, params.clone()));
            history.best_epoch = epoch;
        }
    }
    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, Split, SynthShape};
    use crate::model::encode_model;
    use crate::numerics::Rng;
    use crate::postprocess::SentimentMap;
    use proptest::prelude::*;

    fn tiny_dims() -> LayerDims {
        LayerDims {
            body_channels: 8,
            aes_channels: 6,
            branch: 6,
            fuse1: 6,
            fuse2: 5,
            trunk: 4,
        }
    }

    fn tiny_shape() -> SynthShape {
        SynthShape {
            body_channels: 8,
            aes_channels: 6,
            height: 3,
            width: 3,
        }
    }

    type Splits = (Vec<Sample<f32>>, Vec<Sample<f32>>, Vec<Sample<f32>>);

    fn splits(
        dir: &Path,
        seed: u64,
        n: usize,
        separability: f64,
        shape: SynthShape,
    ) -> Splits {
        let schema = Schema::default();
        let map = SentimentMap::bundled(&schema).unwrap();
        let ds = synth_dataset(dir, seed, n, separability, shape, &schema, &map).unwrap();
        (
            ds.load_samples(Split::Train).unwrap(),
            ds.load_samples(Split::Val).unwrap(),
            ds.load_samples(Split::Test).unwrap(),
        )
    }

    fn filled(p: &HeadParams<f64>, v: f64) -> Gradients<f64> {
        let mut g = Gradients::zeros_like(p);
        g.tensors_mut().into_iter().for_each(|(_, t)| t.fill(v));
        g
    }

    #[test]
    fn sgd_step_examples() {
        let p0 = HeadParams::<f64>::init(Topology::FULL, tiny_dims(), Schema::default(), &mut Rng::new(1)).unwrap();
        let g = filled(&p0, 0.37);

        let mut p = p0.clone();
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, p0);

        let mut ones = p0.clone();
        ones.tensors_mut().into_iter().for_each(|(_, t)| t.fill(1.0));
        sgd_step(&mut ones, &filled(&p0, 2.0), 0.1).unwrap();
        assert!(ones.tensors().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.8)));

        let mut q = p0.clone();
        sgd_step(&mut q, &g, 0.05).unwrap();
        sgd_step(&mut q, &g, -0.05).unwrap();
        for ((_, a), (_, b)) in q.tensors().into_iter().zip(p0.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-15);
            }
        }

        let other = HeadParams::<f64>::zeros(Topology::FULL, LayerDims { trunk: 5, ..tiny_dims() }, Schema::default())
            .unwrap();
        assert!(matches!(
            sgd_step(&mut p, &Gradients::zeros_like(&other), 0.1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 0.001);
        assert_eq!(lr_schedule(14, &cfg), 0.001);
        assert!((lr_schedule(15, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(21, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(22, &cfg) - 1e-5).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn lr_schedule_is_non_increasing(
            decay in proptest::collection::vec(0usize..60, 0..5),
            factor in 0.01f64..=1.0,
            lr0 in 1e-5f64..1.0,
        ) {
            let cfg = TrainConfig { decay_epochs: decay, decay_factor: factor, lr0, epochs: 60, ..TrainConfig::default() };
            for e in 1..60 {
                prop_assert!(lr_schedule(e, &cfg) <= lr_schedule(e - 1, &cfg));
            }
        }
    }

    #[test]
    fn config_parsing() {
        assert_eq!(TrainConfig::from_json("{}").unwrap(), TrainConfig::default());
        let cfg = TrainConfig::from_json(r#"{"epochs": 3, "topology": {"aesthetics": false, "attention": true, "sentiment": true}}"#)
            .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert!(!cfg.topology.aesthetics);
        let err = TrainConfig::from_json(r#"{"epoch": 3}"#).unwrap_err().to_string();
        assert!(err.contains("epoch"), "{err}");
        assert!(matches!(TrainConfig::from_json(r#"{"lambda": 1.5}"#), Err(Error::Argument(_))));
        assert!(matches!(TrainConfig::from_json(r#"{"batch_size": 0}"#), Err(Error::Argument(_))));
    }

    #[test]
    fn empty_split_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (train_split, val, _) = splits(dir.path(), 1, 2, 3.0, tiny_shape());
        let cfg = TrainConfig {
            layer_dims: tiny_dims(),
            ..TrainConfig::default()
        };
        let schema = Schema::default();
        assert!(matches!(train(&schema, &[], &val, &cfg), Err(Error::Argument(_))));
        assert!(matches!(train(&schema, &train_split, &[], &cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn same_seed_same_model() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, va, _) = splits(dir.path(), 5, 12, 4.0, tiny_shape());
        let cfg = TrainConfig {
            layer_dims: tiny_dims(),
            epochs: 6,
            batch_size: 5,
            lr0: 0.05,
            seed: 9,
            ..TrainConfig::default()
        };
        let schema = Schema::default();
        let (a, ha) = train(&schema, &tr, &va, &cfg).unwrap();
        let (b, hb) = train(&schema, &tr, &va, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(encode_model(&a).unwrap(), encode_model(&b).unwrap());
        let (c, _) = train(&schema, &tr, &va, &TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(encode_model(&a).unwrap(), encode_model(&c).unwrap());
    }

    #[test]
    fn keeps_best_validation_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, va, _) = splits(dir.path(), 2, 16, 2.0, tiny_shape());
        let cfg = TrainConfig {
            layer_dims: tiny_dims(),
            epochs: 12,
            batch_size: 4,
            lr0: 0.2,
            decay_epochs: vec![],
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let (best, h) = train_with(&Schema::default(), &tr, &va, &cfg, |r| seen.push(r.epoch)).unwrap();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
        assert_eq!(h.epochs.len(), 12);
        let aps: Vec<f64> = h.epochs.iter().map(|r| r.val_mean_ap).collect();
        let top = aps.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(h.best_epoch, aps.iter().position(|&a| a == top).unwrap());
        assert_eq!(eval::mean_ap(&best, &va).unwrap(), top);
    }

    fn full_loss(p: &HeadParams<f32>, samples: &[Sample<f32>], cfg: &TrainConfig) -> f64 {
        let refs: Vec<&Sample<f32>> = samples.iter().collect();
        backward(&refs, p, cfg).unwrap().0.total
    }

    #[test]
    fn first_epoch_reduces_loss_on_separable_data() {
        for seed in [1, 2, 3] {
            let dir = tempfile::tempdir().unwrap();
            let (tr, va, _) = splits(dir.path(), seed, 32, 10.0, SynthShape::default());
            let cfg = TrainConfig {
                epochs: 1,
                seed,
                ..TrainConfig::default()
            };
            let schema = Schema::default();
            let init = HeadParams::<f32>::init(cfg.topology, cfg.layer_dims, schema.clone(), &mut Rng::new(seed)).unwrap();
            let (after, _) = train(&schema, &tr, &va, &cfg).unwrap();
            let (l0, l1) = (full_loss(&init, &tr, &cfg), full_loss(&after, &tr, &cfg));
            assert!(l1 < l0, "seed {seed}: {l0} -> {l1}");
        }
    }

    /// Mean and standard deviation of mean AP under uniformly random rankings.
    fn chance_mean_ap(labels: &[Vec<bool>], rng: &mut Rng) -> (f64, f64) {
        let classes: Vec<Vec<bool>> = (0..labels[0].len())
            .map(|c| labels.iter().map(|row| row[c]).collect::<Vec<bool>>())
            .filter(|y: &Vec<bool>| y.iter().any(|&v| v))
            .collect();
        let draws: Vec<f64> = (0..2000)
            .map(|_| {
                let total: f64 = classes
                    .iter()
                    .map(|y| {
                        let scores: Vec<f64> = y.iter().map(|_| rng.unit()).collect();
                        eval::average_precision(&scores, y).unwrap()
                    })
                    .sum();
                total / classes.len() as f64
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        (mean, var.sqrt())
    }

    #[test]
    fn pure_noise_stays_at_chance() {
        // Scored on the test split, which plays no part in checkpoint selection.
        for seed in [1, 2, 3] {
            let dir = tempfile::tempdir().unwrap();
            let (tr, va, te) = splits(dir.path(), seed, 32, 0.0, SynthShape::default());
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let (p, _) = train(&Schema::default(), &tr, &va, &cfg).unwrap();
            let got = eval::mean_ap(&p, &te).unwrap();
            let labels: Vec<Vec<bool>> = te.iter().map(|s| s.emotions.clone()).collect();
            let (mean, sd) = chance_mean_ap(&labels, &mut Rng::new(100 + seed));
            assert!((got - mean).abs() <= 4.0 * sd, "seed {seed}: {got} vs chance {mean} ± {sd}");
        }
    }
}
