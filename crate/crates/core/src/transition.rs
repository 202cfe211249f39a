//! Transition functions: operations that map one model state to another.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{init_node, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum TransitionKind {
    /// Sets one hyperparameter (`learning_rate`, `epochs`, `batch_size` or
    /// `seed`).
    HyperparamChange { field: String, value: f64 },
    /// Inserts `[conv2d(filters, kernel_size), relu, maxpool2]` after a node.
    ArchitecturePatch {
        insert_after: String,
        filters: usize,
        kernel_size: usize,
    },
    Retrain {
        epochs: u32,
        seed: u64,
        dataset_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionFunction {
    /// May be omitted in requests; see [`TransitionFunction::normalized`].
    #[serde(default)]
    pub transition_id: String,
    #[serde(flatten)]
    pub kind: TransitionKind,
    /// Originating recommendation id, or `manual`.
    #[serde(default = "manual")]
    pub provenance: String,
}

fn manual() -> String {
    "manual".into()
}

impl TransitionFunction {
    pub fn new(kind: TransitionKind, provenance: impl Into<String>) -> Self {
        let json = serde_json::to_vec(&kind).expect("transition serializes");
        let digest = Sha256::digest(&json);
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        TransitionFunction {
            transition_id: format!("t-{hex}"),
            kind,
            provenance: provenance.into(),
        }
    }

    pub fn hyperparam(field: &str, value: f64, provenance: impl Into<String>) -> Self {
        Self::new(
            TransitionKind::HyperparamChange {
                field: field.to_string(),
                value,
            },
            provenance,
        )
    }

    pub fn conv_patch(insert_after: &str, filters: usize, kernel_size: usize, provenance: impl Into<String>) -> Self {
        Self::new(
            TransitionKind::ArchitecturePatch {
                insert_after: insert_after.to_string(),
                filters,
                kernel_size,
            },
            provenance,
        )
    }

    pub fn retrain(epochs: u32, seed: u64, dataset_id: &str, provenance: impl Into<String>) -> Self {
        Self::new(
            TransitionKind::Retrain {
                epochs,
                seed,
                dataset_id: dataset_id.to_string(),
            },
            provenance,
        )
    }

    /// Recomputes the id from the payload, so ids in incoming requests
    /// cannot disagree with their content.
    pub fn normalized(self) -> Self {
        Self::new(self.kind, self.provenance)
    }
}

fn as_count(field: &str, value: f64) -> Result<u64> {
    if value.fract() != 0.0 || value < 0.0 || !value.is_finite() {
        return Err(Error::InvalidParam(format!("{field} must be a non-negative integer, got {value}")));
    }
    Ok(value as u64)
}

/// Applies a structural transition (hyperparameter change or architecture
/// patch). Retraining needs data and is driven by the trainer.
pub fn apply_structural(state: &ModelState, t: &TransitionFunction) -> Result<ModelState> {
    match &t.kind {
        TransitionKind::HyperparamChange { field, value } => {
            let mut hp = state.hyperparams.clone();
            match field.as_str() {
                "learning_rate" => hp.learning_rate = *value,
                "epochs" => hp.epochs = as_count(field, *value)? as u32,
                "batch_size" => hp.batch_size = as_count(field, *value)? as usize,
                "seed" => hp.seed = as_count(field, *value)?,
                other => return Err(Error::InvalidParam(format!("unknown hyperparameter {other:?}"))),
            }
            hp.validate()?;
            Ok(state.derive(&t.transition_id, |s| s.hyperparams = hp))
        }
        TransitionKind::ArchitecturePatch {
            insert_after,
            filters,
            kernel_size,
        } => {
            let mut graph = state.graph.clone();
            graph.insert_conv_block(insert_after, *filters, *kernel_size)?;
            let shapes = graph.param_shapes().map_err(|e| Error::InvalidPatch(e.to_string()))?;
            let mut parameters = BTreeMap::new();
            for (name, ps) in &shapes {
                let kept = state
                    .parameters
                    .get(name)
                    .filter(|p| p.weights.shape == ps.weights && p.bias.shape == ps.bias);
                let p = match kept {
                    Some(p) => p.clone(),
                    None => init_node(state.hyperparams.seed, name, ps),
                };
                parameters.insert(name.clone(), p);
            }
            Ok(state.derive(&t.transition_id, |s| {
                s.graph = graph;
                s.parameters = parameters;
            }))
        }
        TransitionKind::Retrain { .. } => Err(Error::InvalidInput(
            "retrain transitions run through the trainer".into(),
        )),
    }
}
