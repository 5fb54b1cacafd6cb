//! Multitask emotion and sentiment head over frozen backbone feature maps.
//!
//! The crate covers the whole desk-scale pipeline: the feature-map and model
//! file formats, the attention-pooled two-branch head, manual backprop with a
//! dynamically weighted L2 loss, plain SGD training with best-validation
//! checkpointing, sentiment-guided boosting of emotion scores, average
//! precision evaluation and post-training int8 weight quantization.

mod binfmt;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod postprocess;
pub mod quantize;
pub mod schema;
pub mod training;

pub use error::{Error, Result};
pub use model::{HeadModel, HeadParams, LayerDims, Logits, Topology};
pub use numerics::{Rng, Scalar, Tensor};
pub use postprocess::{Prediction, SentimentMap};
pub use schema::Schema;
