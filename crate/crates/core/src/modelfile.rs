//! `*.emodel.json` model files.
//!
//! Tensor data is written with 17 significant digits so that every `f64`
//! survives a save/load cycle bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::graph::GraphDef;
use crate::model::{Hyperparams, Lineage, ModelState, NodeParams, TrainingMeta};
use crate::tensor::Tensor;

pub const MODEL_FILE_VERSION: u32 = 1;
pub const MODEL_FILE_SUFFIX: &str = ".emodel.json";

/// Formats a float as a JSON number with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn serialize_f64_slice<S: Serializer>(data: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut buf = String::with_capacity(data.len() * 24 + 2);
    buf.push('[');
    for (i, v) in data.iter().enumerate() {
        if i > 0 {
            buf.push(',');
        }
        buf.push_str(&format_f64(*v));
    }
    buf.push(']');
    let raw = RawValue::from_string(buf).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

#[derive(Serialize)]
struct TensorOut<'a> {
    shape: &'a [usize],
    #[serde(serialize_with = "serialize_f64_slice")]
    data: &'a [f64],
}

#[derive(Serialize)]
struct ParamsOut<'a> {
    weights: TensorOut<'a>,
    bias: TensorOut<'a>,
}

#[derive(Serialize)]
struct FileOut<'a> {
    version: u32,
    state_id: &'a str,
    graph: &'a GraphDef,
    hyperparams: &'a Hyperparams,
    lineage: &'a Option<Lineage>,
    meta: &'a TrainingMeta,
    parameters: BTreeMap<&'a str, ParamsOut<'a>>,
}

#[derive(Deserialize)]
struct FileIn {
    #[serde(default)]
    state_id: Option<String>,
    graph: GraphDef,
    hyperparams: Hyperparams,
    #[serde(default)]
    lineage: Option<Lineage>,
    #[serde(default)]
    meta: TrainingMeta,
    parameters: BTreeMap<String, NodeParams>,
}

fn tensor_out(t: &Tensor) -> TensorOut<'_> {
    TensorOut {
        shape: &t.shape,
        data: &t.data,
    }
}

pub fn to_json_bytes(state: &ModelState) -> Vec<u8> {
    let parameters = state
        .parameters
        .iter()
        .map(|(name, p)| {
            (
                name.as_str(),
                ParamsOut {
                    weights: tensor_out(&p.weights),
                    bias: tensor_out(&p.bias),
                },
            )
        })
        .collect();
    let file = FileOut {
        version: MODEL_FILE_VERSION,
        state_id: &state.state_id,
        graph: &state.graph,
        hyperparams: &state.hyperparams,
        lineage: &state.lineage,
        meta: &state.meta,
        parameters,
    };
    let mut out = serde_json::to_vec_pretty(&file).expect("model file serializes");
    out.push(b'\n');
    out
}

pub fn from_json_bytes(bytes: &[u8]) -> Result<ModelState> {
    let value: serde_json::Value = serde_json::from_slice(bytes)
        .map_err(|e| Error::CorruptModel(format!("not valid JSON: {e}")))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_FILE_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::UnsupportedFormat(format!(
                "model file version {v} (supported: {MODEL_FILE_VERSION})"
            )))
        }
        None => return Err(Error::UnsupportedFormat("model file has no version".into())),
    }
    let file: FileIn = serde_json::from_slice(bytes)
        .map_err(|e| Error::CorruptModel(format!("malformed model file: {e}")))?;
    let mut state = ModelState {
        state_id: String::new(),
        graph: file.graph,
        parameters: file.parameters,
        hyperparams: file.hyperparams,
        lineage: file.lineage,
        meta: file.meta,
    };
    state.validate().map_err(|e| match e {
        Error::UnsupportedFormat(_) | Error::CorruptModel(_) => e,
        other => Error::CorruptModel(other.to_string()),
    })?;
    state.hyperparams.validate().map_err(|e| Error::CorruptModel(e.to_string()))?;
    state.state_id = match file.state_id {
        Some(id) if !id.is_empty() => id,
        _ => state.content_id(),
    };
    Ok(state)
}

/// Writes the file atomically (temporary file, then rename).
pub fn save_model(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &to_json_bytes(state))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::io(path, e),
    })?;
    from_json_bytes(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
