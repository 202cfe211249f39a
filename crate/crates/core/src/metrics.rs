//! Model quality metrics on a dataset split.

use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, Split};
use crate::engine;
use crate::error::{Error, Result};
use crate::model::ModelState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub state_id: String,
    pub split: Split,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub mean_loss: f64,
    /// `confusion[true_class][predicted_class]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Per-class precision; a class that is never predicted scores 0.
pub fn precision(confusion: &[Vec<u64>], class: usize) -> f64 {
    let predicted: u64 = confusion.iter().map(|row| row[class]).sum();
    if predicted == 0 {
        0.0
    } else {
        confusion[class][class] as f64 / predicted as f64
    }
}

/// Per-class recall; a class without samples scores 0.
pub fn recall(confusion: &[Vec<u64>], class: usize) -> f64 {
    let actual: u64 = confusion[class].iter().sum();
    if actual == 0 {
        0.0
    } else {
        confusion[class][class] as f64 / actual as f64
    }
}

pub fn accuracy(confusion: &[Vec<u64>]) -> f64 {
    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Softmax cross-entropy of `logits` against `label`, computed stably.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

impl MetricsSnapshot {
    pub fn from_confusion(state_id: &str, split: Split, confusion: Vec<Vec<u64>>, mean_loss: f64) -> Self {
        let k = confusion.len();
        let macro_precision = (0..k).map(|c| precision(&confusion, c)).sum::<f64>() / k as f64;
        let macro_recall = (0..k).map(|c| recall(&confusion, c)).sum::<f64>() / k as f64;
        MetricsSnapshot {
            state_id: state_id.to_string(),
            split,
            accuracy: accuracy(&confusion),
            macro_precision,
            macro_recall,
            mean_loss,
            confusion,
        }
    }
}

pub fn evaluate(state: &ModelState, samples: &[Sample], split: Split) -> Result<MetricsSnapshot> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("{} split is empty", split.as_str())));
    }
    let k = state.graph.num_classes;
    let mut confusion = vec![vec![0u64; k]; k];
    let mut loss = 0.0;
    for s in samples {
        engine::check_target(state, s.label)?;
        let pass = engine::forward(state, &s.input)?;
        let logits = &pass.logits().data;
        confusion[s.label][pass.logits().argmax()] += 1;
        loss += cross_entropy(logits, s.label);
    }
    Ok(MetricsSnapshot::from_confusion(
        &state.state_id,
        split,
        confusion,
        loss / samples.len() as f64,
    ))
}
