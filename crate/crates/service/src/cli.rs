//! Headless command line front end. Every command goes through the same
//! [`Workspace`] calls as the HTTP handlers.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use workbench::advisor::RuleId;
use workbench::dataset::Split;
use workbench::error::Error;
use workbench::heatmap::attribution_svg;
use workbench::model::Hyperparams;
use workbench::report::{ExportFormat, Section};
use workbench::transition::TransitionFunction;
use workbench::workspace::{Arch, CreateState, ExplainRequest, ScanRequest, Workspace};

use crate::error::ApiError;

pub const DEFAULT_BIND: &str = "127.0.0.1:8642";

#[derive(Debug, Parser)]
#[command(name = "workbench", version, about = "Train, explain, diagnose and refine small neural networks")]
pub struct Cli {
    /// Workspace directory (created if missing).
    #[arg(long, global = true, env = "EXPLAINER_WORKSPACE", default_value = "workspace")]
    pub workspace: PathBuf,
    /// Workspace config file; defaults to <workspace>/config.toml.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum AttributionExplainer {
    Lime,
    LrpEpsilon,
    Saliency,
    Gradient,
    GradientXInput,
    Occlusion,
    Smoothgrad,
    IntegratedGradients,
}

impl AttributionExplainer {
    pub fn id(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum IntrospectionExplainer {
    Minmax,
    HistoTrend,
    DeadWeight,
    SaturatedWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum FormatArg {
    Json,
    Markdown,
    SvgBundle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a model on a dataset and train it; prints the trained state id.
    DemoTrain(DemoTrainArgs),
    /// Explain one prediction with an attribution explainer.
    Explain(ExplainArgs),
    /// Run an introspection explainer over a training run.
    Scan(ScanArgs),
    /// List refinement recommendations for a state.
    Recommend {
        #[arg(long)]
        state: String,
    },
    /// Apply a transition (recommendation, hyperparameter change, patch or retrain); prints the new state id.
    Apply(ApplyArgs),
    /// Compare two states on a dataset split.
    Compare {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also compute attribution differences for this sample index.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Evaluate a state on a dataset split.
    Metrics {
        #[arg(long)]
        state: String,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Assemble a report from provenance cards and export it.
    Report(ReportArgs),
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value = DEFAULT_BIND)]
        bind: SocketAddr,
        /// Directory with the built UI, served under /.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DemoTrainArgs {
    #[arg(long, default_value = "bars8")]
    pub dataset: String,
    #[arg(long, value_enum, default_value = "mlp")]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub epochs: u32,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Hidden dense layer widths.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub state: String,
    #[arg(long, value_enum)]
    pub explainer: AttributionExplainer,
    /// Test index, `train:N`, `test:N` or `misclassified`.
    #[arg(long)]
    pub sample: String,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    pub target: Option<usize>,
    /// Explainer parameters as a JSON object.
    #[arg(long)]
    pub params: Option<String>,
    /// Write the heatmap SVG here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the full attribution map JSON here.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Save the result as a provenance card.
    #[arg(long)]
    pub save_card: bool,
    #[arg(long, requires = "save_card")]
    pub annotation: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long, value_enum)]
    pub explainer: IntrospectionExplainer,
    #[arg(long, conflicts_with = "state", required_unless_present = "state")]
    pub run: Option<String>,
    #[arg(long)]
    pub state: Option<String>,
    #[arg(long)]
    pub node: String,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("what").required(true).args(["rec", "transition", "retrain"])))]
pub struct ApplyArgs {
    #[arg(long)]
    pub state: String,
    /// Apply the transition of this recommendation rule (R1..R5).
    #[arg(long, value_parser = parse_rule)]
    pub rec: Option<RuleId>,
    /// Transition as JSON, e.g. `{"kind":"hyperparam_change","payload":{"field":"learning_rate","value":0.01}}`.
    #[arg(long)]
    pub transition: Option<String>,
    /// Retrain the state.
    #[arg(long)]
    pub retrain: bool,
    #[arg(long, requires = "retrain")]
    pub epochs: Option<u32>,
    #[arg(long, requires = "retrain")]
    pub seed: Option<u64>,
    #[arg(long, requires = "retrain")]
    pub dataset: Option<String>,
}

fn parse_rule(s: &str) -> Result<RuleId, String> {
    RuleId::ALL
        .into_iter()
        .find(|r| r.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown rule {s:?} (expected R1..R5)"))
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub title: Option<String>,
    /// Section as `Heading=card-1,card-2`; repeatable.
    #[arg(long = "section")]
    pub sections: Vec<String>,
    /// JSON file with `{"title": ..., "sections": [{"heading", "card_ids", "narrative"}]}`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: FormatArg,
}

fn parse_section(s: &str) -> Result<Section, Error> {
    let (heading, cards) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidInput(format!("section {s:?} must look like Heading=card-1,card-2")))?;
    let ids = cards
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(String::from)
        .collect();
    Ok(Section::new(heading.trim(), ids, ""))
}

fn print_json(v: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(v).expect("output serializes");
    println!("{text}");
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> ExitCode {
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {} [{}]", e.message, e.code);
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> Result<(), ApiError> {
    let ws = Workspace::open(&cli.workspace, cli.config.as_deref())?;
    match cli.command {
        Command::DemoTrain(a) => {
            let hp = Hyperparams {
                learning_rate: a.lr,
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed: a.seed,
            };
            let arch = match a.arch {
                ArchArg::Mlp => Arch::Mlp,
                ArchArg::Cnn => Arch::Cnn,
            };
            let mut req = CreateState::new(arch, &a.dataset, hp);
            req.hidden = a.hidden;
            let summary = ws.demo_train(&req, |e| eprint!("\repoch {e}/{}", a.epochs))?;
            eprintln!();
            eprintln!(
                "run {} written to {}{}",
                summary.run_id,
                ws.runs_dir().join(&summary.run_id).display(),
                if summary.diverged { " (diverged)" } else { "" }
            );
            println!("{}", summary.state_id);
        }
        Command::Explain(a) => {
            let params = match &a.params {
                Some(p) => serde_json::from_str(p)
                    .map_err(|e| Error::InvalidParam(format!("--params is not valid JSON: {e}")))?,
                None => Value::Null,
            };
            let map = ws.explain(&ExplainRequest {
                explainer: a.explainer.id(),
                state: a.state.clone(),
                sample: Value::String(a.sample.clone()),
                target: a.target,
                params,
                dataset: None,
            })?;
            if let Some(out) = &a.out {
                write_file(out, attribution_svg(&map).as_bytes())?;
            }
            if let Some(path) = &a.map {
                write_file(path, &serde_json::to_vec_pretty(&map).expect("maps serialize"))?;
            }
            let card_id = if a.save_card {
                Some(ws.save_attribution_card(&map, a.annotation.clone())?.card_id)
            } else {
                None
            };
            print_json(&json!({
                "explainer_id": map.explainer_id,
                "state_id": map.state_id,
                "sample": map.sample,
                "target": map.target,
                "prediction": map.prediction,
                "total": map.total(),
                "card_id": card_id,
            }));
        }
        Command::Scan(a) => {
            let mut params = serde_json::Map::new();
            if let Some(v) = a.threshold {
                params.insert("threshold".into(), json!(v));
            }
            if let Some(v) = a.delta {
                params.insert("delta".into(), json!(v));
            }
            if let Some(v) = a.window {
                params.insert("window".into(), json!(v));
            }
            let explainer = a.explainer.to_possible_value().expect("named").get_name().to_string();
            let r = ws.scan(&ScanRequest {
                explainer,
                run: a.run,
                state: a.state,
                node: a.node,
                params: Value::Object(params),
            })?;
            print_json(&r);
        }
        Command::Recommend { state } => print_json(&ws.recommend(&state)?),
        Command::Apply(a) => {
            let t = if let Some(rule) = a.rec {
                ws.recommend(&a.state)?
                    .into_iter()
                    .find(|r| r.rule_id == rule)
                    .ok_or_else(|| Error::NotFound(format!("recommendation {} for state {:?}", rule.as_str(), a.state)))?
                    .transition
                    .ok_or_else(|| {
                        Error::InvalidInput(format!("recommendation {} carries no transition", rule.as_str()))
                    })?
            } else if let Some(json) = &a.transition {
                serde_json::from_str::<TransitionFunction>(json)
                    .map_err(|e| Error::InvalidInput(format!("--transition: {e}")))?
            } else {
                let state = ws.get_state(&a.state)?;
                let dataset = a
                    .dataset
                    .or(state.meta.dataset_id.clone())
                    .ok_or_else(|| Error::InvalidInput("state has no dataset; pass --dataset".into()))?;
                TransitionFunction::retrain(
                    a.epochs.unwrap_or(state.hyperparams.epochs),
                    a.seed.unwrap_or(state.hyperparams.seed),
                    &dataset,
                    "manual",
                )
            };
            println!("{}", ws.apply_transition(&a.state, &t)?);
        }
        Command::Compare { a, b, split, sample } => print_json(&ws.compare(&a, &b, split.into(), sample)?),
        Command::Metrics { state, split } => print_json(&ws.evaluate(&state, split.into(), None)?),
        Command::Report(a) => {
            let (title, sections) = match &a.spec {
                Some(path) => {
                    #[derive(serde::Deserialize)]
                    struct Spec {
                        title: String,
                        #[serde(default)]
                        sections: Vec<Section>,
                    }
                    let text = fs::read_to_string(path)
                        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
                    let spec: Spec = serde_json::from_str(&text)
                        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
                    (spec.title, spec.sections)
                }
                None => (
                    a.title.clone().unwrap_or_default(),
                    a.sections.iter().map(|s| parse_section(s)).collect::<Result<_, _>>()?,
                ),
            };
            let report = ws.assemble_report(&title, sections)?;
            let format = match a.format {
                FormatArg::Json => ExportFormat::Json,
                FormatArg::Markdown => ExportFormat::Markdown,
                FormatArg::SvgBundle => ExportFormat::SvgBundle,
            };
            print_json(&ws.export_report(&report.report_id, format)?);
        }
        Command::Serve { bind, ui_dir } => {
            let rt = tokio::runtime::Runtime::new()
                .map_err(|e| ApiError::internal(format!("cannot start runtime: {e}")))?;
            rt.block_on(crate::serve(ws, bind, ui_dir))?;
        }
    }
    Ok(())
}
