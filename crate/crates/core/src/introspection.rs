//! Low-abstraction explainers over logged runs: MinMax, HistoTrend,
//! DeadWeight and SaturatedWeight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runlog::{RunLog, HISTOGRAM_BINS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IntrospectionPayload {
    MinMaxSeries {
        /// `(step, min, max)`.
        points: Vec<(u64, f64, f64)>,
    },
    HistoTrendMatrix {
        edges: Vec<f64>,
        steps: Vec<u64>,
        /// One row of 30 re-binned counts per logged step.
        counts: Vec<Vec<f64>>,
    },
    WeightScan {
        fraction: f64,
        flagged_indices: Vec<usize>,
        total: usize,
        threshold: f64,
        delta: f64,
        window: usize,
        steps: Vec<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrospectionResult {
    pub explainer_id: String,
    pub run_id: String,
    pub node: String,
    pub payload: IntrospectionPayload,
}

impl IntrospectionResult {
    pub fn scan_fraction(&self) -> Option<f64> {
        match self.payload {
            IntrospectionPayload::WeightScan { fraction, .. } => Some(fraction),
            _ => None,
        }
    }
}

pub fn minmax(run: &RunLog, node: &str) -> Result<IntrospectionResult> {
    let points = run
        .read_stats_series(node)?
        .into_iter()
        .map(|(step, s)| (step, s.min, s.max))
        .collect();
    Ok(IntrospectionResult {
        explainer_id: "minmax".into(),
        run_id: run.run_id.clone(),
        node: node.into(),
        payload: IntrospectionPayload::MinMaxSeries { points },
    })
}

/// Spreads `counts` over `src` bin edges onto the `dst` bins in proportion to
/// interval overlap.
pub fn rebin(src_edges: &[f64], counts: &[u64], dst_edges: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; dst_edges.len() - 1];
    for (b, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let (lo, hi) = (src_edges[b], src_edges[b + 1]);
        let width = hi - lo;
        let first = dst_edges.partition_point(|&e| e <= lo).saturating_sub(1);
        for t in first..out.len() {
            let (tlo, thi) = (dst_edges[t], dst_edges[t + 1]);
            if tlo >= hi {
                break;
            }
            let overlap = hi.min(thi) - lo.max(tlo);
            if overlap > 0.0 {
                out[t] += count as f64 * overlap / width;
            }
        }
    }
    out
}

/// Re-bins every step's histogram onto 30 common equal-width bins spanning
/// all stored histogram ranges.
pub fn histo_trend(run: &RunLog, node: &str) -> Result<IntrospectionResult> {
    let series = run.read_histo_series(node)?;
    let lo = series.iter().map(|(_, h)| h.edges[0]).fold(f64::INFINITY, f64::min);
    let hi = series
        .iter()
        .map(|(_, h)| h.edges[HISTOGRAM_BINS])
        .fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| lo + width * i as f64).collect();
    edges[HISTOGRAM_BINS] = hi;
    let counts = series.iter().map(|(_, h)| rebin(&h.edges, &h.counts, &edges)).collect();
    Ok(IntrospectionResult {
        explainer_id: "histo_trend".into(),
        run_id: run.run_id.clone(),
        node: node.into(),
        payload: IntrospectionPayload::HistoTrendMatrix {
            edges,
            steps: series.iter().map(|(s, _)| *s).collect(),
            counts,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub threshold: f64,
    pub delta: f64,
    pub window: usize,
}

impl ScanParams {
    pub const DEAD: ScanParams = ScanParams {
        threshold: 1e-3,
        delta: 1e-4,
        window: 5,
    };
    pub const SATURATED: ScanParams = ScanParams {
        threshold: 1.0,
        delta: 1e-4,
        window: 5,
    };
}

/// Splits `dense1`, `dense1/weights` or `dense1/bias` into node and tensor.
fn resolve_tensor(node: &str) -> (&str, &str) {
    match node.rsplit_once('/') {
        Some((n, t @ ("weights" | "bias"))) => (n, t),
        _ => (node, "weights"),
    }
}

/// Values of one parameter tensor at each of the last `window` checkpoints.
fn checkpoint_values(run: &RunLog, node: &str, window: usize) -> Result<(Vec<u64>, Vec<Vec<f64>>)> {
    if window < 2 {
        return Err(Error::InvalidParam("scan window must cover at least 2 checkpoints".into()));
    }
    let available = run.checkpoints().len();
    if available < 2 {
        return Err(Error::InsufficientCheckpoints {
            needed: 2,
            found: available,
        });
    }
    let (node_name, tensor) = resolve_tensor(node);
    let steps: Vec<u64> = run.checkpoints().keys().rev().take(window).rev().copied().collect();
    let mut values = Vec::with_capacity(steps.len());
    for &step in &steps {
        let state = run.load_checkpoint(step)?;
        let p = state
            .parameters
            .get(node_name)
            .ok_or_else(|| Error::NotFound(format!("trainable node {node_name:?} in checkpoint {step}")))?;
        let t = if tensor == "bias" { &p.bias } else { &p.weights };
        if let Some(prev) = values.last().map(|v: &Vec<f64>| v.len()) {
            if prev != t.len() {
                return Err(Error::InvalidInput(format!(
                    "tensor {node:?} changes size between checkpoints"
                )));
            }
        }
        values.push(t.data.clone());
    }
    Ok((steps, values))
}

/// Indices whose magnitude satisfies `keep` at every checkpoint and whose
/// largest step-to-step change is at most `delta`.
fn weight_scan(
    explainer_id: &str,
    run: &RunLog,
    node: &str,
    params: ScanParams,
    keep: impl Fn(f64) -> bool,
) -> Result<IntrospectionResult> {
    let (steps, values) = checkpoint_values(run, node, params.window)?;
    let n = values[0].len();
    let flagged: Vec<usize> = (0..n)
        .filter(|&i| {
            values.iter().all(|v| keep(v[i].abs()))
                && values.windows(2).all(|w| (w[1][i] - w[0][i]).abs() <= params.delta)
        })
        .collect();
    Ok(IntrospectionResult {
        explainer_id: explainer_id.into(),
        run_id: run.run_id.clone(),
        node: node.into(),
        payload: IntrospectionPayload::WeightScan {
            fraction: if n == 0 { 0.0 } else { flagged.len() as f64 / n as f64 },
            flagged_indices: flagged,
            total: n,
            threshold: params.threshold,
            delta: params.delta,
            window: params.window,
            steps,
        },
    })
}

pub fn dead_weight(run: &RunLog, node: &str, params: ScanParams) -> Result<IntrospectionResult> {
    weight_scan("dead_weight", run, node, params, |a| a <= params.threshold)
}

pub fn saturated_weight(run: &RunLog, node: &str, params: ScanParams) -> Result<IntrospectionResult> {
    weight_scan("saturated_weight", run, node, params, |a| a >= params.threshold)
}
