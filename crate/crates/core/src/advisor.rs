//! Heuristic refinement recommendations.
//!
//! Rules look at the graph, the latest metrics, the training loss series and
//! any weight scans. Every rule degrades gracefully when its inputs are
//! missing. Thresholds come from [`AdvisorConfig`], which can be read from
//! the `[advisor]` table of a workspace config file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeKind;
use crate::introspection::IntrospectionResult;
use crate::metrics::MetricsSnapshot;
use crate::model::ModelState;
use crate::transition::{apply_structural, TransitionFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Suggested,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl RuleId {
    pub const ALL: [RuleId; 5] = [RuleId::R1, RuleId::R2, RuleId::R3, RuleId::R4, RuleId::R5];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::R1 => "R1",
            RuleId::R2 => "R2",
            RuleId::R3 => "R3",
            RuleId::R4 => "R4",
            RuleId::R5 => "R5",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub rec_id: String,
    pub rule_id: RuleId,
    pub title: String,
    pub rationale: String,
    pub references: Vec<String>,
    pub transition: Option<TransitionFunction>,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisorConfig {
    pub conv_filters: usize,
    pub conv_kernel_size: usize,
    pub dead_fraction: f64,
    pub loss_window: usize,
    pub generalization_gap: f64,
    pub saturated_fraction: f64,
    pub lr_factor: f64,
    /// Rules listed here are skipped.
    pub disabled: Vec<RuleId>,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        AdvisorConfig {
            conv_filters: 8,
            conv_kernel_size: 3,
            dead_fraction: 0.2,
            loss_window: 3,
            generalization_gap: 0.1,
            saturated_fraction: 0.2,
            lr_factor: 0.1,
            disabled: Vec::new(),
        }
    }
}

impl AdvisorConfig {
    pub fn validate(&self) -> Result<()> {
        let fractions = [self.dead_fraction, self.generalization_gap, self.saturated_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidParam("advisor fraction thresholds must lie in [0, 1]".into()));
        }
        if self.loss_window < 2 {
            return Err(Error::InvalidParam("advisor loss_window must be at least 2".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor.is_finite()) {
            return Err(Error::InvalidParam("advisor lr_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the rules may consult besides the state itself.
#[derive(Debug, Clone, Default)]
pub struct AdvisorInput<'a> {
    pub train_metrics: Option<&'a MetricsSnapshot>,
    pub test_metrics: Option<&'a MetricsSnapshot>,
    /// Mean training loss per logged epoch, oldest first.
    pub loss_series: &'a [f64],
    pub scans: &'a [IntrospectionResult],
}

fn base_node(node: &str) -> &str {
    node.split_once('/').map_or(node, |(n, _)| n)
}

/// Highest scan fraction reported by `explainer_id`, restricted to nodes for
/// which `accept` holds.
fn worst_scan<'a>(
    scans: &'a [IntrospectionResult],
    explainer_id: &str,
    accept: impl Fn(&str) -> bool,
) -> Option<(&'a str, f64)> {
    scans
        .iter()
        .filter(|r| r.explainer_id == explainer_id && accept(base_node(&r.node)))
        .filter_map(|r| r.scan_fraction().map(|f| (r.node.as_str(), f)))
        .fold(None, |best: Option<(&str, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        })
}

/// Keeps `t` only if it applies cleanly to `state`.
fn checked(state: &ModelState, t: TransitionFunction) -> Option<TransitionFunction> {
    apply_structural(state, &t).ok().map(|_| t)
}

pub fn recommend(state: &ModelState, input: &AdvisorInput<'_>, cfg: &AdvisorConfig) -> Vec<Recommendation> {
    let rec_id = |rule: RuleId| format!("{}-{}", rule.as_str(), state.state_id);
    let lr = state.hyperparams.learning_rate;
    let mut out = Vec::new();
    let enabled = |rule: RuleId| !cfg.disabled.contains(&rule);

    if enabled(RuleId::R1) && state.graph.input_shape.len() >= 2 && !state.graph.has_kind(NodeKind::Conv2d) {
        let id = rec_id(RuleId::R1);
        let input = state.graph.nodes[0].name.clone();
        let t = TransitionFunction::conv_patch(&input, cfg.conv_filters, cfg.conv_kernel_size, id.clone());
        out.push(Recommendation {
            rule_id: RuleId::R1,
            title: "Add a convolutional block".into(),
            rationale: format!(
                "The input has spatial shape {:?} but the model contains no convolution. A conv2d({}, {}) + relu + \
                 maxpool2 block after {input:?} shares weights across positions and usually generalizes better \
                 on image-like data than dense layers alone.",
                state.graph.input_shape, cfg.conv_filters, cfg.conv_kernel_size
            ),
            references: vec![
                "LeCun, Bottou, Bengio, Haffner (1998). Gradient-based learning applied to document recognition."
                    .into(),
                "https://cs231n.github.io/convolutional-networks/".into(),
            ],
            transition: checked(state, t),
            severity: Severity::Strong,
            rec_id: id,
        });
    }

    let is_dense = |n: &str| state.graph.node(n).is_some_and(|d| d.op.kind() == NodeKind::Dense);
    if enabled(RuleId::R2) {
        if let Some((node, f)) = worst_scan(input.scans, "dead_weight", is_dense) {
            if f > cfg.dead_fraction {
                out.push(Recommendation {
                    rec_id: rec_id(RuleId::R2),
                    rule_id: RuleId::R2,
                    title: "Reduce the width of dense layers".into(),
                    rationale: format!(
                        "{:.0}% of the weights in {node:?} stay near zero without changing across the last \
                         checkpoints (threshold {:.0}%). These units contribute nothing; a narrower layer \
                         trains faster with the same capacity in use.",
                        f * 100.0,
                        cfg.dead_fraction * 100.0
                    ),
                    references: vec![
                        "Han, Pool, Tran, Dally (2015). Learning both weights and connections for efficient neural networks."
                            .into(),
                    ],
                    transition: None,
                    severity: Severity::Suggested,
                });
            }
        }
    }

    if enabled(RuleId::R3) && input.loss_series.len() >= cfg.loss_window {
        let tail = &input.loss_series[input.loss_series.len() - cfg.loss_window..];
        if tail.windows(2).all(|w| w[1] >= w[0]) {
            let id = rec_id(RuleId::R3);
            let t = TransitionFunction::hyperparam("learning_rate", lr * cfg.lr_factor, id.clone());
            out.push(Recommendation {
                rule_id: RuleId::R3,
                title: "Lower the learning rate".into(),
                rationale: format!(
                    "The training loss did not decrease over the last {} logged epochs ({}). The step size \
                     {lr} is likely too large; try {}.",
                    cfg.loss_window,
                    tail.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
                    lr * cfg.lr_factor
                ),
                references: vec![
                    "Bengio (2012). Practical recommendations for gradient-based training of deep architectures."
                        .into(),
                ],
                transition: checked(state, t),
                severity: Severity::Suggested,
                rec_id: id,
            });
        }
    }

    if enabled(RuleId::R4) {
        if let (Some(tr), Some(te)) = (input.train_metrics, input.test_metrics) {
            let gap = tr.accuracy - te.accuracy;
            if gap > cfg.generalization_gap {
                out.push(Recommendation {
                    rec_id: rec_id(RuleId::R4),
                    rule_id: RuleId::R4,
                    title: "Reduce overfitting".into(),
                    rationale: format!(
                        "Train accuracy {:.3} exceeds test accuracy {:.3} by {gap:.3}. Collect more training \
                         data or use a smaller model.",
                        tr.accuracy, te.accuracy
                    ),
                    references: vec![
                        "Goodfellow, Bengio, Courville (2016). Deep Learning, chapter 7: Regularization.".into(),
                    ],
                    transition: None,
                    severity: Severity::Suggested,
                });
            }
        }
    }

    if enabled(RuleId::R5) {
        if let Some((node, f)) = worst_scan(input.scans, "saturated_weight", |_| true) {
            if f > cfg.saturated_fraction {
                let id = rec_id(RuleId::R5);
                let t = TransitionFunction::hyperparam("learning_rate", lr * cfg.lr_factor, id.clone());
                out.push(Recommendation {
                    rule_id: RuleId::R5,
                    title: "Saturated weights detected".into(),
                    rationale: format!(
                        "{:.0}% of the weights in {node:?} sit at large magnitude with negligible updates. \
                         Lower the learning rate to {}; if the weights stay saturated, re-initialize the layer.",
                        f * 100.0,
                        lr * cfg.lr_factor
                    ),
                    references: vec![
                        "Glorot, Bengio (2010). Understanding the difficulty of training deep feedforward neural networks."
                            .into(),
                    ],
                    transition: checked(state, t),
                    severity: Severity::Info,
                    rec_id: id,
                });
            }
        }
    }

    sort_recommendations(&mut out);
    out
}

/// Severity descending, then rule id ascending.
pub fn sort_recommendations(recs: &mut [Recommendation]) {
    recs.sort_by(|a, b| b.severity.cmp(&a.severity).then(a.rule_id.cmp(&b.rule_id)));
}
