//! Model states: a graph plus one concrete set of parameters.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::GraphDef;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 16,
            seed: 7,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParam("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Where a state came from: its parent and the transition that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent: String,
    pub transition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Number of SGD updates applied so far.
    #[serde(default)]
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub state_id: String,
    pub graph: GraphDef,
    pub parameters: BTreeMap<String, NodeParams>,
    pub hyperparams: Hyperparams,
    pub lineage: Option<Lineage>,
    pub meta: TrainingMeta,
}

impl ModelState {
    /// Fresh state with He-uniform weights and zero biases drawn from
    /// `hyperparams.seed`.
    pub fn initialize(graph: GraphDef, hyperparams: Hyperparams) -> Result<Self> {
        hyperparams.validate()?;
        let mut parameters = BTreeMap::new();
        for (name, shapes) in graph.param_shapes()? {
            parameters.insert(name.clone(), init_node(hyperparams.seed, &name, &shapes));
        }
        let mut s = ModelState {
            state_id: String::new(),
            graph,
            parameters,
            hyperparams,
            lineage: None,
            meta: TrainingMeta::default(),
        };
        s.state_id = s.content_id();
        Ok(s)
    }

    /// Checks parameter tensors against the graph.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.graph.param_shapes()?;
        for (name, ps) in &shapes {
            let p = self
                .parameters
                .get(name)
                .ok_or_else(|| Error::CorruptModel(format!("missing parameters for node {name:?}")))?;
            if p.weights.shape != ps.weights || p.bias.shape != ps.bias {
                return Err(Error::CorruptModel(format!(
                    "node {name:?}: parameter shapes {:?}/{:?} do not match graph {:?}/{:?}",
                    p.weights.shape, p.bias.shape, ps.weights, ps.bias
                )));
            }
            p.weights
                .validate()
                .and_then(|_| p.bias.validate())
                .map_err(|e| Error::CorruptModel(format!("node {name:?}: {e}")))?;
        }
        if let Some(extra) = self.parameters.keys().find(|k| !shapes.contains_key(*k)) {
            return Err(Error::CorruptModel(format!(
                "parameters for unknown or non-trainable node {extra:?}"
            )));
        }
        Ok(())
    }

    /// Content-derived identifier: identical content yields the same id.
    pub fn content_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.graph).expect("graph serializes"));
        h.update(serde_json::to_vec(&self.hyperparams).expect("hyperparams serialize"));
        h.update(serde_json::to_vec(&self.lineage).expect("lineage serializes"));
        h.update(self.meta.step.to_le_bytes());
        for (name, p) in &self.parameters {
            h.update(name.as_bytes());
            for t in [&p.weights, &p.bias] {
                for d in &t.shape {
                    h.update((*d as u64).to_le_bytes());
                }
                for v in &t.data {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        let digest = h.finalize();
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("s-{hex}")
    }

    /// Derived state with the given lineage and a recomputed id.
    pub fn derive(&self, transition_id: &str, f: impl FnOnce(&mut ModelState)) -> ModelState {
        let mut next = self.clone();
        f(&mut next);
        next.lineage = Some(Lineage {
            parent: self.state_id.clone(),
            transition: transition_id.to_string(),
        });
        next.state_id = next.content_id();
        next
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters
            .values()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the node name, mixed with the state seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// He-uniform weights in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, zero bias.
pub(crate) fn init_node(seed: u64, name: &str, shapes: &crate::graph::ParamShapes) -> NodeParams {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
    let limit = (6.0 / shapes.fan_in.max(1) as f64).sqrt();
    let n: usize = shapes.weights.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    NodeParams {
        weights: Tensor {
            shape: shapes.weights.clone(),
            data,
        },
        bias: Tensor::zeros(&shapes.bias),
    }
}
