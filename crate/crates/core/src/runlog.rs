//! Run logs: per-(step, node) tensor aggregates computed at logging time,
//! plus full model checkpoints.
//!
//! Layout of one run directory:
//!
//! ```text
//! runs/<run_id>/log.jsonl              one SummaryRecord per line
//! runs/<run_id>/ckpt_<step>.emodel.json
//! runs/<run_id>/meta.json
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::modelfile::{self, MODEL_FILE_SUFFIX};

pub const HISTOGRAM_BINS: usize = 30;
pub const LOG_FILE: &str = "log.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub l2: f64,
}

impl Stats {
    pub fn of(data: &[f64]) -> Stats {
        assert!(!data.is_empty(), "stats of an empty tensor");
        let n = data.len() as f64;
        let min = data.iter().copied().fold(f64::INFINITY, f64::min);
        let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (data.iter().sum::<f64>() / n).clamp(min, max);
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let l2 = data.iter().map(|v| v * v).sum::<f64>().sqrt();
        Stats {
            min,
            max,
            mean,
            std: var.sqrt(),
            l2,
        }
    }

    pub fn get(&self, stat: &str) -> Result<f64> {
        Ok(match stat {
            "min" => self.min,
            "max" => self.max,
            "mean" => self.mean,
            "std" => self.std,
            "l2" => self.l2,
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown statistic {other:?} (expected min, max, mean, std or l2)"
                )))
            }
        })
    }
}

/// 30 equal-width bins between the tensor's own min and max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn of(data: &[f64]) -> Histogram {
        let stats = Stats::of(data);
        let (lo, hi) = if stats.min == stats.max {
            (stats.min - 0.5, stats.min + 0.5)
        } else {
            (stats.min, stats.max)
        };
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        let mut edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| lo + width * i as f64).collect();
        edges[HISTOGRAM_BINS] = hi;
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &v in data {
            let bin = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != HISTOGRAM_BINS + 1 || self.counts.len() != HISTOGRAM_BINS {
            return Err(Error::InvalidInput("histogram needs 31 edges and 30 counts".into()));
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("histogram edges must increase strictly".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub step: u64,
    pub node: String,
    pub stats: Stats,
    pub histogram: Histogram,
}

impl SummaryRecord {
    pub fn of(step: u64, node: impl Into<String>, data: &[f64]) -> Self {
        SummaryRecord {
            step,
            node: node.into(),
            stats: Stats::of(data),
            histogram: Histogram::of(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub created_at: String,
    pub dataset_id: String,
    pub graph_fingerprint: String,
    #[serde(default)]
    pub source_state: Option<String>,
    #[serde(default)]
    pub final_state: Option<String>,
    #[serde(default)]
    pub diverged: bool,
}

/// Record name of a parameter tensor: `<node>/weights` or `<node>/bias`.
pub fn param_record_name(node: &str, tensor: &str) -> String {
    format!("{node}/{tensor}")
}

#[derive(Debug)]
pub struct RunLog {
    pub run_id: String,
    dir: PathBuf,
    records: Vec<SummaryRecord>,
    keys: HashSet<(u64, String)>,
    checkpoints: BTreeMap<u64, PathBuf>,
}

impl RunLog {
    /// Creates a new run directory. Fails if the run already has records.
    pub fn create(dir: impl Into<PathBuf>, meta: &RunMeta) -> Result<RunLog> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let meta_bytes = serde_json::to_vec_pretty(meta).expect("meta serializes");
        modelfile::write_atomic(&dir.join(META_FILE), &meta_bytes)?;
        let log_path = dir.join(LOG_FILE);
        File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if checkpoint_step(&path).is_some() {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(RunLog {
            run_id: meta.run_id.clone(),
            dir,
            records: Vec::new(),
            keys: HashSet::new(),
            checkpoints: BTreeMap::new(),
        })
    }

    /// Opens an existing run, merging every `log*.jsonl` file in the
    /// directory and dropping duplicate `(step, node)` records.
    pub fn open(dir: impl Into<PathBuf>) -> Result<RunLog> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::NotFound(format!("run directory {}", dir.display())));
        }
        let run_id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut log_files = Vec::new();
        let mut checkpoints = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if name.starts_with("log") && name.ends_with(".jsonl") {
                log_files.push(path);
            } else if let Some(step) = checkpoint_step(&path) {
                checkpoints.insert(step, path);
            }
        }
        log_files.sort();
        let mut merged = Vec::new();
        for f in &log_files {
            merged.extend(read_records(f)?);
        }
        merged.sort_by_key(|r| r.step);
        let mut keys = HashSet::new();
        let records: Vec<SummaryRecord> = merged
            .into_iter()
            .filter(|r| keys.insert((r.step, r.node.clone())))
            .collect();
        Ok(RunLog {
            run_id,
            dir,
            records,
            keys,
            checkpoints,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records(&self) -> &[SummaryRecord] {
        &self.records
    }

    pub fn last_step(&self) -> Option<u64> {
        self.records.last().map(|r| r.step)
    }

    pub fn meta(&self) -> Result<RunMeta> {
        let path = self.dir.join(META_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::InvalidInput(format!("bad run meta: {e}")))
    }

    pub fn write_meta(&self, meta: &RunMeta) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(meta).expect("meta serializes");
        modelfile::write_atomic(&self.dir.join(META_FILE), &bytes)
    }

    /// Appends one record per parameter tensor of `state`.
    pub fn log_step(&mut self, state: &ModelState, step: u64) -> Result<Vec<SummaryRecord>> {
        if let Some(last) = self.last_step() {
            if step <= last {
                return Err(Error::LogOrderViolation { step, last });
            }
        }
        let mut batch = Vec::new();
        for (node, p) in &state.parameters {
            batch.push(SummaryRecord::of(step, param_record_name(node, "weights"), &p.weights.data));
            batch.push(SummaryRecord::of(step, param_record_name(node, "bias"), &p.bias.data));
        }
        self.append(&batch)?;
        Ok(batch)
    }

    /// Appends a scalar series value (e.g. `train/loss`) at `step`, which may
    /// equal the last logged step.
    pub fn log_scalar(&mut self, step: u64, node: &str, value: f64) -> Result<SummaryRecord> {
        if let Some(last) = self.last_step() {
            if step < last {
                return Err(Error::LogOrderViolation { step, last });
            }
        }
        if self.keys.contains(&(step, node.to_string())) {
            return Err(Error::InvalidInput(format!("{node:?} already logged at step {step}")));
        }
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!("{node:?} value at step {step} is not finite")));
        }
        let rec = SummaryRecord::of(step, node, &[value]);
        self.append(std::slice::from_ref(&rec))?;
        Ok(rec)
    }

    fn append(&mut self, batch: &[SummaryRecord]) -> Result<()> {
        let path = self.dir.join(LOG_FILE);
        let mut f = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        for rec in batch {
            let mut line = serde_json::to_vec(rec).expect("record serializes");
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::io(&path, e))?;
        }
        f.sync_data().map_err(|e| Error::io(&path, e))?;
        for rec in batch {
            self.keys.insert((rec.step, rec.node.clone()));
            self.records.push(rec.clone());
        }
        Ok(())
    }

    pub fn save_checkpoint(&mut self, state: &ModelState, step: u64) -> Result<PathBuf> {
        let path = self.dir.join(format!("ckpt_{step}{MODEL_FILE_SUFFIX}"));
        modelfile::save_model(state, &path)?;
        self.checkpoints.insert(step, path.clone());
        Ok(path)
    }

    pub fn checkpoints(&self) -> &BTreeMap<u64, PathBuf> {
        &self.checkpoints
    }

    pub fn load_checkpoint(&self, step: u64) -> Result<ModelState> {
        let path = self
            .checkpoints
            .get(&step)
            .ok_or_else(|| Error::NotFound(format!("checkpoint at step {step}")))?;
        modelfile::load_model(path)
    }

    /// Distinct record names in first-logged order.
    pub fn nodes(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.node.as_str()))
            .map(|r| r.node.clone())
            .collect()
    }

    fn node_records<'a>(&'a self, node: &'a str) -> Result<impl Iterator<Item = &'a SummaryRecord> + 'a> {
        if !self.records.iter().any(|r| r.node == node) {
            return Err(Error::NotFound(format!("node {node:?} in run {:?}", self.run_id)));
        }
        Ok(self.records.iter().filter(move |r| r.node == node))
    }

    /// `(step, value)` pairs of one statistic, ordered by step.
    pub fn read_series(&self, node: &str, stat: &str) -> Result<Vec<(u64, f64)>> {
        Stats::of(&[0.0]).get(stat)?;
        self.node_records(node)?
            .map(|r| Ok((r.step, r.stats.get(stat)?)))
            .collect()
    }

    pub fn read_histo_series(&self, node: &str) -> Result<Vec<(u64, Histogram)>> {
        Ok(self.node_records(node)?.map(|r| (r.step, r.histogram.clone())).collect())
    }

    pub fn read_stats_series(&self, node: &str) -> Result<Vec<(u64, Stats)>> {
        Ok(self.node_records(node)?.map(|r| (r.step, r.stats)).collect())
    }
}

fn checkpoint_step(path: &Path) -> Option<u64> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("ckpt_")?.strip_suffix(MODEL_FILE_SUFFIX)?.parse().ok()
}

/// Parses a JSON-lines log. A trailing line that is incomplete (no newline or
/// unparsable) is treated as a torn write and ignored.
pub fn read_records(path: &Path) -> Result<Vec<SummaryRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let lines: Vec<&str> = complete.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<SummaryRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => {
                return Err(Error::InvalidInput(format!(
                    "{}: corrupt record on line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Run ids under a `runs/` directory, sorted.
pub fn list_runs(runs_dir: &Path) -> Result<Vec<String>> {
    if !runs_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(runs_dir).map_err(|e| Error::io(runs_dir, e))? {
        let entry = entry.map_err(|e| Error::io(runs_dir, e))?;
        if entry.path().join(META_FILE).is_file() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}
