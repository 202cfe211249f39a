//! Persistent registry of model states and their lineage forest.
//!
//! ```text
//! workspace/states/<state_id>.emodel.json
//! workspace/lineage.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::modelfile::{self, MODEL_FILE_SUFFIX};
use crate::transition::TransitionFunction;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct LineageFile {
    /// state id -> (parent id, transition id)
    states: BTreeMap<String, Option<(String, String)>>,
    transitions: BTreeMap<String, TransitionFunction>,
}

/// One node of the lineage forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageNode {
    pub state_id: String,
    pub parent: Option<String>,
    pub transition: Option<TransitionFunction>,
    pub children: Vec<String>,
}

#[derive(Debug)]
pub struct StateRegistry {
    root: PathBuf,
    states: BTreeMap<String, ModelState>,
    lineage: LineageFile,
}

impl StateRegistry {
    pub fn open(workspace: impl AsRef<Path>) -> Result<Self> {
        let root = workspace.as_ref().to_path_buf();
        let dir = root.join("states");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let lineage_path = root.join("lineage.json");
        let lineage = if lineage_path.is_file() {
            let bytes = fs::read(&lineage_path).map_err(|e| Error::io(&lineage_path, e))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| Error::InvalidInput(format!("corrupt lineage.json: {e}")))?
        } else {
            LineageFile::default()
        };
        let mut states = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let is_model = path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(MODEL_FILE_SUFFIX));
            if is_model {
                let s = modelfile::load_model(&path)?;
                states.insert(s.state_id.clone(), s);
            }
        }
        Ok(StateRegistry { root, states, lineage })
    }

    pub fn state_path(&self, state_id: &str) -> PathBuf {
        self.root.join("states").join(format!("{state_id}{MODEL_FILE_SUFFIX}"))
    }

    /// Registers a state (idempotent for identical ids). `transition` is the
    /// function that produced it, recorded in the lineage file.
    pub fn register(&mut self, state: ModelState, transition: Option<&TransitionFunction>) -> Result<String> {
        state.validate()?;
        let id = state.state_id.clone();
        if let Some(existing) = self.states.get(&id) {
            if existing != &state {
                return Err(Error::InvalidInput(format!("state id {id:?} already names a different state")));
            }
            return Ok(id);
        }
        let link = match &state.lineage {
            Some(l) => {
                if !self.states.contains_key(&l.parent) {
                    return Err(Error::NotFound(format!("parent state {:?}", l.parent)));
                }
                if self.ancestors(&l.parent).iter().any(|a| a == &id) || l.parent == id {
                    return Err(Error::InvalidInput(format!("registering {id:?} would create a lineage cycle")));
                }
                Some((l.parent.clone(), l.transition.clone()))
            }
            None => None,
        };
        modelfile::save_model(&state, self.state_path(&id))?;
        self.lineage.states.insert(id.clone(), link);
        if let Some(t) = transition {
            self.lineage.transitions.insert(t.transition_id.clone(), t.clone());
        }
        self.write_lineage()?;
        self.states.insert(id.clone(), state);
        Ok(id)
    }

    fn write_lineage(&self) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(&self.lineage).expect("lineage serializes");
        modelfile::write_atomic(&self.root.join("lineage.json"), &bytes)
    }

    pub fn get(&self, state_id: &str) -> Result<&ModelState> {
        self.states
            .get(state_id)
            .ok_or_else(|| Error::NotFound(format!("state {state_id:?}")))
    }

    pub fn contains(&self, state_id: &str) -> bool {
        self.states.contains_key(state_id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.states.keys().cloned().collect()
    }

    pub fn transition(&self, transition_id: &str) -> Option<&TransitionFunction> {
        self.lineage.transitions.get(transition_id)
    }

    /// Parent chain of `state_id`, nearest first.
    pub fn ancestors(&self, state_id: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = self.states.get(state_id).and_then(|s| s.lineage.as_ref()).map(|l| l.parent.clone());
        while let Some(p) = cur {
            if out.contains(&p) {
                break;
            }
            cur = self.states.get(&p).and_then(|s| s.lineage.as_ref()).map(|l| l.parent.clone());
            out.push(p);
        }
        out
    }

    /// All states as a forest: roots have no parent; children listed by id.
    pub fn forest(&self) -> Vec<LineageNode> {
        let mut children: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for s in self.states.values() {
            if let Some(l) = &s.lineage {
                children.entry(l.parent.as_str()).or_default().push(s.state_id.clone());
            }
        }
        self.states
            .values()
            .map(|s| LineageNode {
                state_id: s.state_id.clone(),
                parent: s.lineage.as_ref().map(|l| l.parent.clone()),
                transition: s
                    .lineage
                    .as_ref()
                    .and_then(|l| self.lineage.transitions.get(&l.transition).cloned()),
                children: children.get(s.state_id.as_str()).cloned().unwrap_or_default(),
            })
            .collect()
    }
}
