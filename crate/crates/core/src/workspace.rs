//! One workspace directory holding states, runs, provenance and reports,
//! with every operation the service and the CLI expose.
//!
//! ```text
//! <root>/config.toml            optional; [advisor] and [datasets.<id>]
//! <root>/states/<id>.emodel.json
//! <root>/lineage.json
//! <root>/runs/<run_id>/         run logs and checkpoints
//! <root>/provenance.jsonl
//! <root>/reports/<report_id>/   exports
//! <root>/docs/<key>.md          optional doc overrides
//! ```
//!
//! `Workspace` is `Sync`: reads share the registry, writes are serialized.
//! Training runs outside every lock and only registers its result at the end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::advisor::{recommend, AdvisorConfig, AdvisorInput, Recommendation};
use crate::attribution::{self, AttributionMap, AttributionMethod};
use crate::compare::{compare_states, ComparisonReport};
use crate::dataset::{self, Dataset, IdxPaths, Split};
use crate::docs::{DocCard, DocStore};
use crate::engine;
use crate::error::{Error, Result};
use crate::graph::{GraphDef, NodeKind};
use crate::introspection::{self, IntrospectionResult, ScanParams};
use crate::metrics::{evaluate, MetricsSnapshot};
use crate::model::{Hyperparams, ModelState};
use crate::provenance::{CardFilter, CardKind, CardSource, NewCard, ProvenanceCard, ProvenanceStore};
use crate::report::{export_report, ExportFormat, Report, Section};
use crate::runlog::{self, Histogram, RunLog, RunMeta};
use crate::states::{LineageNode, StateRegistry};
use crate::taxonomy::{self, ExplainerDescriptor};
use crate::train::{self, LOSS_SERIES};
use crate::transition::{apply_structural, TransitionFunction, TransitionKind};

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceConfig {
    pub advisor: AdvisorConfig,
    /// Extra IDX datasets by id; `bars8` is always available.
    pub datasets: BTreeMap<String, IdxPaths>,
}

impl WorkspaceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: WorkspaceConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        cfg.advisor.validate()?;
        // Relative dataset paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in cfg.datasets.values_mut() {
            for f in [&mut p.train_images, &mut p.train_labels, &mut p.test_images, &mut p.test_labels] {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateState {
    pub arch: Arch,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default)]
    pub hyperparams: Hyperparams,
}

fn default_dataset() -> String {
    dataset::BARS8.into()
}
fn default_hidden() -> Vec<usize> {
    vec![16]
}
fn default_filters() -> usize {
    8
}
fn default_kernel() -> usize {
    3
}

impl CreateState {
    pub fn new(arch: Arch, dataset: &str, hyperparams: Hyperparams) -> Self {
        CreateState {
            arch,
            dataset: dataset.into(),
            hidden: default_hidden(),
            filters: default_filters(),
            kernel_size: default_kernel(),
            hyperparams,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub source_state: String,
    pub state_id: String,
    pub run_id: String,
    pub diverged: bool,
    pub epoch_losses: Vec<f64>,
}

/// A sample reference: `3` (test split), `test:3`, `train:12` or
/// `misclassified` (first misclassified test sample).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleRef {
    Index(Split, usize),
    Misclassified,
}

impl SampleRef {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "misclassified" {
            return Ok(SampleRef::Misclassified);
        }
        let (split, index) = match s.split_once(':') {
            Some((sp, i)) => (Split::parse(sp)?, i),
            None => (Split::Test, s),
        };
        let index = index
            .parse()
            .map_err(|_| Error::InvalidParam(format!("bad sample reference {s:?}")))?;
        Ok(SampleRef::Index(split, index))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainRequest {
    pub explainer: String,
    pub state: String,
    /// Accepts a number or a string such as `"test:3"` or `"misclassified"`.
    pub sample: Value,
    /// Defaults to the predicted class.
    #[serde(default)]
    pub target: Option<usize>,
    #[serde(default)]
    pub params: Value,
    /// Defaults to the dataset the state was created or trained on.
    #[serde(default)]
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRequest {
    pub explainer: String,
    /// Either a run id or a state id (whose training run is used).
    #[serde(default)]
    pub run: Option<String>,
    #[serde(default)]
    pub state: Option<String>,
    pub node: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportResult {
    pub report_id: String,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

pub struct Workspace {
    root: PathBuf,
    config: WorkspaceConfig,
    registry: RwLock<StateRegistry>,
    provenance: RwLock<ProvenanceStore>,
    docs: DocStore,
    datasets: Mutex<BTreeMap<String, Arc<Dataset>>>,
}

fn read<T>(l: &RwLock<T>) -> RwLockReadGuard<'_, T> {
    l.read().unwrap_or_else(|e| e.into_inner())
}

fn write<T>(l: &RwLock<T>) -> RwLockWriteGuard<'_, T> {
    l.write().unwrap_or_else(|e| e.into_inner())
}

fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn param_f64(params: &Value, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::InvalidParam(format!("{key} must be a number"))),
    }
}

impl Workspace {
    /// Opens (creating if needed) the workspace at `root`. The config is read
    /// from `config` if given, else from `<root>/config.toml` if present.
    pub fn open(root: impl Into<PathBuf>, config: Option<&Path>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("runs")).map_err(|e| Error::io(&root, e))?;
        let default_cfg = root.join(CONFIG_FILE);
        let config = match config {
            Some(p) => WorkspaceConfig::load(p)?,
            None if default_cfg.is_file() => WorkspaceConfig::load(&default_cfg)?,
            None => WorkspaceConfig::default(),
        };
        Ok(Workspace {
            registry: RwLock::new(StateRegistry::open(&root)?),
            provenance: RwLock::new(ProvenanceStore::open(&root)?),
            docs: DocStore::with_override_dir(root.join("docs")),
            datasets: Mutex::new(BTreeMap::new()),
            config,
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &WorkspaceConfig {
        &self.config
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn state_path(&self, state_id: &str) -> PathBuf {
        read(&self.registry).state_path(state_id)
    }

    // ---- datasets -------------------------------------------------------

    pub fn dataset(&self, dataset_id: &str) -> Result<Arc<Dataset>> {
        let mut cache = self.datasets.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(d) = cache.get(dataset_id) {
            return Ok(d.clone());
        }
        let d = if let Some(paths) = self.config.datasets.get(dataset_id) {
            dataset::load_idx(dataset_id, paths)?
        } else if dataset_id == dataset::BARS8 {
            dataset::bars8()
        } else {
            return Err(Error::NotFound(format!("dataset {dataset_id:?}")));
        };
        let d = Arc::new(d);
        cache.insert(dataset_id.into(), d.clone());
        Ok(d)
    }

    fn state_dataset(&self, state: &ModelState, explicit: Option<&str>) -> Result<Arc<Dataset>> {
        match explicit.or(state.meta.dataset_id.as_deref()) {
            Some(id) => self.dataset(id),
            None => Err(Error::InvalidInput(format!(
                "state {:?} has no associated dataset; pass one explicitly",
                state.state_id
            ))),
        }
    }

    // ---- states ---------------------------------------------------------

    pub fn create_state(&self, req: &CreateState) -> Result<String> {
        let data = self.dataset(&req.dataset)?;
        let shape = data.input_shape.clone();
        let graph = match req.arch {
            Arch::Mlp => GraphDef::mlp(shape, &req.hidden, data.num_classes),
            Arch::Cnn => GraphDef::cnn(shape, req.filters, req.kernel_size, &req.hidden, data.num_classes)?,
        };
        let mut state = ModelState::initialize(graph, req.hyperparams.clone())?;
        state.meta.dataset_id = Some(req.dataset.clone());
        state.state_id = state.content_id();
        write(&self.registry).register(state, None)
    }

    pub fn register_state(&self, state: ModelState) -> Result<String> {
        write(&self.registry).register(state, None)
    }

    pub fn get_state(&self, state_id: &str) -> Result<ModelState> {
        read(&self.registry).get(state_id).cloned()
    }

    pub fn list_states(&self) -> Vec<LineageNode> {
        read(&self.registry).forest()
    }

    // ---- training -------------------------------------------------------

    /// Deterministic run id for training `state_id` with transition `t`.
    pub fn run_id_for(state_id: &str, t: &TransitionFunction) -> String {
        format!("run-{}", short_hash(&[state_id, &t.transition_id]))
    }

    /// Trains `state_id` with its own hyperparameters (or the overrides) and
    /// registers the result.
    pub fn train(
        &self,
        state_id: &str,
        dataset_id: Option<&str>,
        overrides: Option<(u32, u64)>,
        on_epoch: impl FnMut(u32),
    ) -> Result<TrainSummary> {
        let state = self.get_state(state_id)?;
        let data = self.state_dataset(&state, dataset_id)?;
        let (epochs, seed) = overrides.unwrap_or((state.hyperparams.epochs, state.hyperparams.seed));
        let t = TransitionFunction::retrain(epochs, seed, &data.dataset_id, "manual");
        self.run_retrain(&state, &data, &t, on_epoch)
    }

    fn run_retrain(
        &self,
        state: &ModelState,
        data: &Dataset,
        t: &TransitionFunction,
        on_epoch: impl FnMut(u32),
    ) -> Result<TrainSummary> {
        let TransitionKind::Retrain { epochs, seed, .. } = t.kind else {
            return Err(Error::InvalidInput("not a retrain transition".into()));
        };
        let run_id = Self::run_id_for(&state.state_id, t);
        let run_dir = self.runs_dir().join(&run_id);
        let out = train::train_with(state, data, &run_dir, &run_id, epochs, seed, on_epoch)?;
        let new_id = write(&self.registry).register(out.state, Some(t))?;
        Ok(TrainSummary {
            source_state: state.state_id.clone(),
            state_id: new_id,
            run_id,
            diverged: out.diverged,
            epoch_losses: out.epoch_losses,
        })
    }

    /// Creates a fresh model on `dataset_id` and trains it.
    pub fn demo_train(&self, req: &CreateState, on_epoch: impl FnMut(u32)) -> Result<TrainSummary> {
        let id = self.create_state(req)?;
        self.train(&id, None, None, on_epoch)
    }

    /// Applies any transition, training for retrain transitions.
    pub fn apply_transition(&self, state_id: &str, t: &TransitionFunction) -> Result<String> {
        let t = t.clone().normalized();
        let state = self.get_state(state_id)?;
        match &t.kind {
            TransitionKind::Retrain { dataset_id, .. } => {
                let data = self.dataset(dataset_id)?;
                Ok(self.run_retrain(&state, &data, &t, |_| {})?.state_id)
            }
            _ => {
                let next = apply_structural(&state, &t)?;
                write(&self.registry).register(next, Some(&t))
            }
        }
    }

    // ---- samples and explanations --------------------------------------

    pub fn resolve_sample(&self, state: &ModelState, data: &Dataset, sample: &SampleRef) -> Result<(Split, usize)> {
        match sample {
            SampleRef::Index(split, i) => {
                data.sample(*split, *i)?;
                Ok((*split, *i))
            }
            SampleRef::Misclassified => {
                for (i, s) in data.test.iter().enumerate() {
                    if engine::predict(state, &s.input)? != s.label {
                        return Ok((Split::Test, i));
                    }
                }
                Err(Error::NotFound(format!(
                    "no misclassified test sample for state {:?}",
                    state.state_id
                )))
            }
        }
    }

    pub fn explain(&self, req: &ExplainRequest) -> Result<AttributionMap> {
        let method = AttributionMethod::from_params(&req.explainer, &req.params)?;
        let state = self.get_state(&req.state)?;
        let data = self.state_dataset(&state, req.dataset.as_deref())?;
        let sample = match &req.sample {
            Value::Number(n) => SampleRef::Index(
                Split::Test,
                n.as_u64()
                    .ok_or_else(|| Error::InvalidParam("sample index must be a non-negative integer".into()))?
                    as usize,
            ),
            Value::String(s) => SampleRef::parse(s)?,
            _ => return Err(Error::InvalidParam("sample must be an index or a reference string".into())),
        };
        let (split, index) = self.resolve_sample(&state, &data, &sample)?;
        let s = data.sample(split, index)?;
        let target = match req.target {
            Some(t) => t,
            None => engine::predict(&state, &s.input)?,
        };
        let map = attribution::explain(&state, &s.input, target, &method)?;
        Ok(map.with_sample(format!("{}:{index}", split.as_str())))
    }

    // ---- runs and introspection ----------------------------------------

    pub fn list_runs(&self) -> Result<Vec<RunMeta>> {
        runlog::list_runs(&self.runs_dir())?
            .into_iter()
            .map(|id| self.open_run(&id)?.meta())
            .collect()
    }

    pub fn open_run(&self, run_id: &str) -> Result<RunLog> {
        let is_id = !run_id.is_empty()
            && run_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        let dir = self.runs_dir().join(run_id);
        if !is_id || !dir.join(runlog::META_FILE).is_file() {
            return Err(Error::NotFound(format!("run {run_id:?}")));
        }
        RunLog::open(dir)
    }

    /// Graph of the model a run trained.
    pub fn run_graph(&self, run_id: &str) -> Result<GraphDef> {
        let run = self.open_run(run_id)?;
        let meta = run.meta()?;
        for id in [&meta.final_state, &meta.source_state].into_iter().flatten() {
            if let Ok(s) = self.get_state(id) {
                return Ok(s.graph);
            }
        }
        match run.checkpoints().keys().next() {
            Some(&step) => Ok(run.load_checkpoint(step)?.graph),
            None => Err(Error::NotFound(format!("graph of run {run_id:?}"))),
        }
    }

    pub fn run_series(&self, run_id: &str, node: &str, stat: &str) -> Result<Vec<(u64, f64)>> {
        self.open_run(run_id)?.read_series(node, stat)
    }

    pub fn run_histos(&self, run_id: &str, node: &str) -> Result<Vec<(u64, Histogram)>> {
        self.open_run(run_id)?.read_histo_series(node)
    }

    fn run_of_state(&self, state_id: &str) -> Result<String> {
        self.get_state(state_id)?
            .meta
            .run_id
            .ok_or_else(|| Error::NotFound(format!("training run of state {state_id:?}")))
    }

    pub fn scan(&self, req: &ScanRequest) -> Result<IntrospectionResult> {
        let run_id = match (&req.run, &req.state) {
            (Some(r), _) => r.clone(),
            (None, Some(s)) => self.run_of_state(s)?,
            (None, None) => return Err(Error::InvalidInput("scan needs a run or a state".into())),
        };
        let run = self.open_run(&run_id)?;
        let with = |base: ScanParams| -> Result<ScanParams> {
            let mut p = base;
            if let Some(v) = param_f64(&req.params, "threshold")? {
                p.threshold = v;
            }
            if let Some(v) = param_f64(&req.params, "delta")? {
                p.delta = v;
            }
            if let Some(v) = param_f64(&req.params, "window")? {
                if v.fract() != 0.0 || v < 0.0 {
                    return Err(Error::InvalidParam("window must be a non-negative integer".into()));
                }
                p.window = v as usize;
            }
            Ok(p)
        };
        match req.explainer.as_str() {
            "minmax" => introspection::minmax(&run, &req.node),
            "histo_trend" => introspection::histo_trend(&run, &req.node),
            "dead_weight" => introspection::dead_weight(&run, &req.node, with(ScanParams::DEAD)?),
            "saturated_weight" => introspection::saturated_weight(&run, &req.node, with(ScanParams::SATURATED)?),
            other => Err(Error::InvalidParam(format!("{other:?} is not an introspection explainer"))),
        }
    }

    // ---- metrics, comparison, recommendations --------------------------

    pub fn evaluate(&self, state_id: &str, split: Split, dataset_id: Option<&str>) -> Result<MetricsSnapshot> {
        let state = self.get_state(state_id)?;
        let data = self.state_dataset(&state, dataset_id)?;
        evaluate(&state, data.split(split), split)
    }

    pub fn compare(&self, a: &str, b: &str, split: Split, sample: Option<usize>) -> Result<ComparisonReport> {
        let sa = self.get_state(a)?;
        let sb = self.get_state(b)?;
        let data = self.state_dataset(&sa, None)?;
        compare_states(&sa, &sb, &data, split, sample)
    }

    /// Runs the advisor with everything known about the state: metrics on
    /// its dataset, the loss series and weight scans of its training run.
    pub fn recommend(&self, state_id: &str) -> Result<Vec<Recommendation>> {
        let state = self.get_state(state_id)?;
        let data = self.state_dataset(&state, None).ok();
        let train_m = data.as_ref().map(|d| evaluate(&state, &d.train, Split::Train)).transpose()?;
        let test_m = data.as_ref().map(|d| evaluate(&state, &d.test, Split::Test)).transpose()?;
        let mut losses = Vec::new();
        let mut scans = Vec::new();
        if let Some(run) = state.meta.run_id.as_deref().and_then(|r| self.open_run(r).ok()) {
            losses = run.read_series(LOSS_SERIES, "mean").unwrap_or_default().into_iter().map(|(_, v)| v).collect();
            for node in state.graph.trainable_nodes() {
                if node.kind() == NodeKind::Dense {
                    if let Ok(r) = introspection::dead_weight(&run, &node.name, ScanParams::DEAD) {
                        scans.push(r);
                    }
                }
                if let Ok(r) = introspection::saturated_weight(&run, &node.name, ScanParams::SATURATED) {
                    scans.push(r);
                }
            }
        }
        let input = AdvisorInput {
            train_metrics: train_m.as_ref(),
            test_metrics: test_m.as_ref(),
            loss_series: &losses,
            scans: &scans,
        };
        Ok(recommend(&state, &input, &self.config.advisor))
    }

    // ---- catalogue ------------------------------------------------------

    pub fn explainers(&self) -> Vec<ExplainerDescriptor> {
        taxonomy::registry()
    }

    pub fn doc(&self, key: &str) -> Result<DocCard> {
        self.docs.lookup(key)
    }

    // ---- provenance and reports ----------------------------------------

    pub fn add_card(&self, card: NewCard) -> Result<ProvenanceCard> {
        write(&self.provenance).add_card(card)
    }

    /// Saves an attribution map as a card.
    pub fn save_attribution_card(&self, map: &AttributionMap, annotation: Option<String>) -> Result<ProvenanceCard> {
        self.add_card(NewCard {
            kind: CardKind::Attribution,
            payload: serde_json::to_value(map).expect("maps serialize"),
            source: CardSource {
                state_id: Some(map.state_id.clone()),
                explainer_id: Some(map.explainer_id.clone()),
                sample: Some(map.sample.clone()),
            },
            annotation,
            created_at: None,
        })
    }

    pub fn annotate_card(&self, card_id: &str, text: &str) -> Result<ProvenanceCard> {
        write(&self.provenance).annotate(card_id, text).cloned()
    }

    pub fn group_cards(&self, card_ids: &[String], group_id: &str) -> Result<()> {
        write(&self.provenance).group(card_ids, group_id)
    }

    pub fn delete_card(&self, card_id: &str) -> Result<()> {
        write(&self.provenance).delete_card(card_id)
    }

    pub fn get_card(&self, card_id: &str) -> Result<ProvenanceCard> {
        read(&self.provenance).get(card_id).cloned()
    }

    pub fn list_cards(&self, filter: &CardFilter) -> Vec<ProvenanceCard> {
        read(&self.provenance).list(filter).into_iter().cloned().collect()
    }

    pub fn assemble_report(&self, title: &str, sections: Vec<Section>) -> Result<Report> {
        write(&self.provenance).assemble_report(title, sections)
    }

    pub fn get_report(&self, report_id: &str) -> Result<Report> {
        read(&self.provenance).report(report_id).cloned()
    }

    pub fn list_reports(&self) -> Vec<Report> {
        read(&self.provenance).reports().cloned().collect()
    }

    pub fn report_dir(&self, report_id: &str) -> PathBuf {
        self.root.join("reports").join(report_id)
    }

    pub fn export_report(&self, report_id: &str, format: ExportFormat) -> Result<ExportResult> {
        let store = read(&self.provenance);
        let report = store.report(report_id)?;
        let dir = self.report_dir(report_id);
        let files = export_report(report, &store, &dir, format)?;
        Ok(ExportResult {
            report_id: report_id.into(),
            dir,
            files,
        })
    }
}
