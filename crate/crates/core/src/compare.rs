//! Point-wise comparison of two model states.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attribution::{self, AttributionMethod};
use crate::dataset::{Dataset, Split};
use crate::error::Result;
use crate::metrics::{evaluate, MetricsSnapshot};
use crate::model::ModelState;
use crate::runlog::Stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub mean_loss: f64,
}

impl MetricDeltas {
    /// `b - a` for every metric.
    pub fn between(a: &MetricsSnapshot, b: &MetricsSnapshot) -> Self {
        MetricDeltas {
            accuracy: b.accuracy - a.accuracy,
            macro_precision: b.macro_precision - a.macro_precision,
            macro_recall: b.macro_recall - a.macro_recall,
            mean_loss: b.mean_loss - a.mean_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatDeltas {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    pub l2: f64,
}

impl StatDeltas {
    fn between(a: &Stats, b: &Stats) -> Self {
        StatDeltas {
            min: b.min - a.min,
            max: b.max - a.max,
            mean: b.mean - a.mean,
            std: b.std - a.std,
            l2: b.l2 - a.l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionDiff {
    pub explainer_id: String,
    pub target: usize,
    pub shape: Vec<usize>,
    /// `b - a` per input element.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: String,
    pub b: String,
    pub split: Split,
    pub metrics_a: MetricsSnapshot,
    pub metrics_b: MetricsSnapshot,
    pub metric_deltas: MetricDeltas,
    /// Per shared trainable node: `<node>/weights` and `<node>/bias`.
    pub parameter_deltas: BTreeMap<String, StatDeltas>,
    pub attribution_diffs: Vec<AttributionDiff>,
}

/// Explainers used for attribution differences; deterministic and cheap.
pub const COMPARISON_EXPLAINERS: [&str; 3] = ["saliency", "gradient_x_input", "lrp_epsilon"];

pub fn compare_states(
    a: &ModelState,
    b: &ModelState,
    dataset: &Dataset,
    split: Split,
    sample: Option<usize>,
) -> Result<ComparisonReport> {
    let metrics_a = evaluate(a, dataset.split(split), split)?;
    let metrics_b = evaluate(b, dataset.split(split), split)?;
    let mut parameter_deltas = BTreeMap::new();
    for (name, pa) in &a.parameters {
        if let Some(pb) = b.parameters.get(name) {
            parameter_deltas.insert(
                format!("{name}/weights"),
                StatDeltas::between(&Stats::of(&pa.weights.data), &Stats::of(&pb.weights.data)),
            );
            parameter_deltas.insert(
                format!("{name}/bias"),
                StatDeltas::between(&Stats::of(&pa.bias.data), &Stats::of(&pb.bias.data)),
            );
        }
    }
    let mut attribution_diffs = Vec::new();
    if let Some(index) = sample {
        let s = dataset.sample(split, index)?;
        if a.graph.input_shape == b.graph.input_shape && s.input.shape == a.graph.input_shape {
            for id in COMPARISON_EXPLAINERS {
                let method = AttributionMethod::from_params(id, &serde_json::Value::Null)?;
                let ma = attribution::explain(a, &s.input, s.label, &method)?;
                let mb = attribution::explain(b, &s.input, s.label, &method)?;
                attribution_diffs.push(AttributionDiff {
                    explainer_id: id.to_string(),
                    target: s.label,
                    shape: ma.shape.clone(),
                    values: mb.values.iter().zip(&ma.values).map(|(y, x)| y - x).collect(),
                });
            }
        }
    }
    Ok(ComparisonReport {
        a: a.state_id.clone(),
        b: b.state_id.clone(),
        split,
        metric_deltas: MetricDeltas::between(&metrics_a, &metrics_b),
        metrics_a,
        metrics_b,
        parameter_deltas,
        attribution_diffs,
    })
}
