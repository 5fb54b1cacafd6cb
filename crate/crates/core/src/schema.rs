use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 26 discrete emotion categories of the EMOTIC annotations.
pub const EMOTIC_EMOTIONS: [&str; 26] = [
    "Affection",
    "Anger",
    "Annoyance",
    "Anticipation",
    "Aversion",
    "Confidence",
    "Disapproval",
    "Disconnection",
    "Disquietment",
    "Doubt/Confusion",
    "Embarrassment",
    "Engagement",
    "Esteem",
    "Excitement",
    "Fatigue",
    "Fear",
    "Happiness",
    "Pain",
    "Peace",
    "Pleasure",
    "Sadness",
    "Sensitivity",
    "Suffering",
    "Surprise",
    "Sympathy",
    "Yearning",
];

pub const SENTIMENTS: [&str; 3] = ["positive", "negative", "neutral"];

/// Ordered class names for both task heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub emotions: Vec<String>,
    pub sentiments: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            emotions: EMOTIC_EMOTIONS.iter().map(|s| s.to_string()).collect(),
            sentiments: SENTIMENTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Schema {
    pub fn new(emotions: Vec<String>, sentiments: Vec<String>) -> Result<Self> {
        let s = Schema {
            emotions,
            sentiments,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.emotions.is_empty() || self.sentiments.is_empty() {
            return Err(Error::Schema("schema needs at least one emotion and one sentiment".into()));
        }
        for names in [&self.emotions, &self.sentiments] {
            for (i, n) in names.iter().enumerate() {
                if n.is_empty() {
                    return Err(Error::Schema("empty class name".into()));
                }
                if names[..i].contains(n) {
                    return Err(Error::Schema(format!("duplicate class name {n:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn num_emotions(&self) -> usize {
        self.emotions.len()
    }

    pub fn num_sentiments(&self) -> usize {
        self.sentiments.len()
    }

    pub fn emotion_index(&self, name: &str) -> Result<usize> {
        self.emotions
            .iter()
            .position(|e| e == name)
            .ok_or_else(|| Error::Schema(format!("unknown emotion {name:?}")))
    }

    pub fn sentiment_index(&self, name: &str) -> Result<usize> {
        self.sentiments
            .iter()
            .position(|e| e == name)
            .ok_or_else(|| Error::Schema(format!("unknown sentiment {name:?}")))
    }
}
