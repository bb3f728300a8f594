use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub window_index: usize,
    pub score: f64,
    pub label: u8,
}

/// Per-window scores keyed by `(subject_id, window_index)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    entries: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(entries: Vec<Prediction>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.score.is_finite() {
                bail!(
                    Validation,
                    "non-finite score for {} window {}",
                    e.subject_id,
                    e.window_index
                );
            }
            if e.label > 1 {
                bail!(
                    Validation,
                    "label {} for {} window {} is not binary",
                    e.label,
                    e.subject_id,
                    e.window_index
                );
            }
            if !seen.insert((e.subject_id.as_str(), e.window_index)) {
                bail!(
                    Data,
                    "duplicate prediction for {} window {}",
                    e.subject_id,
                    e.window_index
                );
            }
        }
        Ok(Self { entries })
    }

    /// Builds a set from parallel score and label arrays under one subject id.
    pub fn from_scores(subject_id: &str, scores: &[f64], labels: &[u8]) -> Result<Self> {
        if scores.len() != labels.len() {
            bail!(
                Length,
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            );
        }
        Self::new(
            scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&score, &label))| Prediction {
                    subject_id: subject_id.to_string(),
                    window_index: i,
                    score,
                    label,
                })
                .collect(),
        )
    }

    /// Concatenates sets, rejecting keys that occur in more than one.
    pub fn concat<'a>(sets: impl IntoIterator<Item = &'a PredictionSet>) -> Result<Self> {
        Self::new(
            sets.into_iter()
                .flat_map(|s| s.entries.iter().cloned())
                .collect(),
        )
    }

    pub fn entries(&self) -> &[Prediction] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.entries.iter().filter(|e| e.label == 1).count();
        (pos, self.entries.len() - pos)
    }
}
