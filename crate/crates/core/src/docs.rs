//! Look-up documentation cards for node kinds and explainers.
//!
//! Cards are Markdown files `docs/<key>.md` with a small front-matter block:
//!
//! ```text
//! ---
//! title: Convolution layer
//! references:
//!   - "LeCun et al. ..."
//! ---
//! body text
//! ```
//!
//! The crate bundles a default set; a directory given at runtime overrides
//! individual files without a rebuild.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocCard {
    pub key: String,
    pub title: String,
    pub body: String,
    pub references: Vec<String>,
}

macro_rules! bundled {
    ($($key:literal),* $(,)?) => {
        &[$(($key, include_str!(concat!("../docs/", $key, ".md")))),*]
    };
}

const BUNDLED: &[(&str, &str)] = bundled!(
    "conv2d",
    "dead_weight",
    "dense",
    "flatten",
    "gradient",
    "gradient_x_input",
    "histo_trend",
    "input",
    "integrated_gradients",
    "lime",
    "lookup",
    "lrp_epsilon",
    "maxpool2",
    "minmax",
    "occlusion",
    "relu",
    "saliency",
    "saturated_weight",
    "smoothgrad",
    "softmax",
);

pub fn parse_doc(key: &str, text: &str) -> Result<DocCard> {
    let bad = |m: &str| Error::InvalidInput(format!("doc {key:?}: {m}"));
    let rest = text
        .strip_prefix("---\n")
        .ok_or_else(|| bad("missing front-matter"))?;
    let end = rest.find("\n---").ok_or_else(|| bad("unterminated front-matter"))?;
    let (front, body) = (&rest[..end], &rest[end + 4..]);
    let mut title = None;
    let mut references = Vec::new();
    let mut in_refs = false;
    for line in front.lines() {
        if let Some(t) = line.strip_prefix("title:") {
            title = Some(unquote(t.trim()));
            in_refs = false;
        } else if line.trim_end() == "references:" {
            in_refs = true;
        } else if let (true, Some(item)) = (in_refs, line.trim_start().strip_prefix("- ")) {
            references.push(unquote(item.trim()));
        } else if !line.trim().is_empty() {
            in_refs = false;
        }
    }
    Ok(DocCard {
        key: key.to_string(),
        title: title.ok_or_else(|| bad("missing title"))?,
        body: body.trim().to_string(),
        references,
    })
}

fn unquote(s: &str) -> String {
    match s.strip_prefix('"').and_then(|s| s.strip_suffix('"')) {
        Some(inner) => inner.replace("\\\"", "\""),
        None => s.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct DocStore {
    override_dir: Option<PathBuf>,
}

impl Default for DocStore {
    fn default() -> Self {
        DocStore::bundled()
    }
}

impl DocStore {
    pub fn bundled() -> Self {
        DocStore { override_dir: None }
    }

    /// Files in `dir` take precedence over the bundled cards.
    pub fn with_override_dir(dir: impl Into<PathBuf>) -> Self {
        DocStore {
            override_dir: Some(dir.into()),
        }
    }

    fn is_key(key: &str) -> bool {
        !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
    }

    pub fn lookup(&self, key: &str) -> Result<DocCard> {
        if !Self::is_key(key) {
            return Err(Error::NotFound(format!("doc {key:?}")));
        }
        if let Some(dir) = &self.override_dir {
            let path = dir.join(format!("{key}.md"));
            if path.is_file() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                return parse_doc(key, &text);
            }
        }
        BUNDLED
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| Error::NotFound(format!("doc {key:?}")))
            .and_then(|(k, text)| parse_doc(k, text))
    }

    pub fn keys(&self) -> Vec<String> {
        let mut keys: BTreeMap<String, ()> = BUNDLED.iter().map(|(k, _)| (k.to_string(), ())).collect();
        if let Some(dir) = self.override_dir.as_deref() {
            keys.extend(override_keys(dir).into_iter().map(|k| (k, ())));
        }
        keys.into_keys().collect()
    }
}

fn override_keys(dir: &Path) -> Vec<String> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".md").map(str::to_string))
        .collect()
}
