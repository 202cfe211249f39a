//! Reports: ordered sections of provenance cards, exported as JSON, Markdown
//! or a bundle of SVG heatmaps. Exports are pure functions of the report and
//! the cards it references.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::AttributionMap;
use crate::compare::ComparisonReport;
use crate::error::{Error, Result};
use crate::heatmap::attribution_svg;
use crate::introspection::{IntrospectionPayload, IntrospectionResult};
use crate::metrics::MetricsSnapshot;
use crate::modelfile::write_atomic;
use crate::provenance::{CardKind, ProvenanceCard, ProvenanceStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub card_ids: Vec<String>,
    #[serde(default)]
    pub narrative: String,
}

impl Section {
    pub fn new(heading: impl Into<String>, card_ids: Vec<String>, narrative: impl Into<String>) -> Self {
        Section {
            heading: heading.into(),
            card_ids,
            narrative: narrative.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: String,
    pub title: String,
    pub sections: Vec<Section>,
}

impl Report {
    /// The id is derived from the content, so identical reports share it.
    pub fn new(title: impl Into<String>, sections: Vec<Section>) -> Self {
        let title = title.into();
        let body = serde_json::to_vec(&(&title, &sections)).expect("report serializes");
        let digest = Sha256::digest(&body);
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        Report {
            report_id: format!("r-{hex}"),
            title,
            sections,
        }
    }

    /// Referenced card ids in report order, duplicates included.
    pub fn card_ids(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().flat_map(|s| s.card_ids.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Json,
    Markdown,
    SvgBundle,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "markdown" | "md" => Ok(ExportFormat::Markdown),
            "svg_bundle" => Ok(ExportFormat::SvgBundle),
            other => Err(Error::UnsupportedFormat(format!(
                "export format {other:?} (expected json, markdown or svg_bundle)"
            ))),
        }
    }
}

/// The distinct cards of `report` in first-reference order.
pub fn report_cards<'a>(report: &Report, store: &'a ProvenanceStore) -> Result<Vec<&'a ProvenanceCard>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for id in report.card_ids() {
        if seen.insert(id) {
            let card = store
                .get(id)
                .map_err(|_| Error::DanglingReference(format!("report references unknown card {id:?}")))?;
            out.push(card);
        }
    }
    Ok(out)
}

/// SVG rendering of a card, where one exists.
pub fn card_svg(card: &ProvenanceCard) -> Option<String> {
    match card.kind {
        CardKind::Attribution => serde_json::from_value::<AttributionMap>(card.payload.clone())
            .ok()
            .map(|m| attribution_svg(&m)),
        _ => None,
    }
}

fn svg_rel_path(card_id: &str) -> String {
    format!("cards/{card_id}.svg")
}

fn json_block(out: &mut String, v: &serde_json::Value) {
    let pretty = serde_json::to_string_pretty(v).expect("json values serialize");
    let _ = write!(out, "```json\n{pretty}\n```\n\n");
}

fn card_summary(out: &mut String, card: &ProvenanceCard) {
    let p = &card.payload;
    match card.kind {
        CardKind::Attribution => match serde_json::from_value::<AttributionMap>(p.clone()) {
            Ok(m) => {
                let _ = write!(
                    out,
                    "![{} heatmap]({})\n\nExplainer `{}` for target class {}; model output [{}]; total attribution {:.6}.\n\n",
                    card.card_id,
                    svg_rel_path(&card.card_id),
                    m.explainer_id,
                    m.target,
                    m.prediction.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
                    m.total()
                );
            }
            Err(_) => json_block(out, p),
        },
        CardKind::Metrics => match serde_json::from_value::<MetricsSnapshot>(p.clone()) {
            Ok(m) => {
                let _ = write!(
                    out,
                    "| split | accuracy | macro precision | macro recall | mean loss |\n|---|---|---|---|---|\n| {} | {:.4} | {:.4} | {:.4} | {:.4} |\n\n",
                    m.split.as_str(),
                    m.accuracy,
                    m.macro_precision,
                    m.macro_recall,
                    m.mean_loss
                );
            }
            Err(_) => json_block(out, p),
        },
        CardKind::Comparison => match serde_json::from_value::<ComparisonReport>(p.clone()) {
            Ok(c) => {
                let d = &c.metric_deltas;
                let _ = write!(
                    out,
                    "`{}` vs `{}` on the {} split: accuracy {:+.4}, macro precision {:+.4}, macro recall {:+.4}, mean loss {:+.4}.\n\n",
                    c.a,
                    c.b,
                    c.split.as_str(),
                    d.accuracy,
                    d.macro_precision,
                    d.macro_recall,
                    d.mean_loss
                );
            }
            Err(_) => json_block(out, p),
        },
        CardKind::Introspection => match serde_json::from_value::<IntrospectionResult>(p.clone()) {
            Ok(r) => {
                let detail = match &r.payload {
                    IntrospectionPayload::WeightScan { fraction, flagged_indices, total, .. } => format!(
                        "{} of {total} values flagged (fraction {fraction:.4})",
                        flagged_indices.len()
                    ),
                    IntrospectionPayload::MinMaxSeries { points } => match points.last() {
                        Some((step, lo, hi)) => {
                            format!("{} steps; at step {step} min {lo:.4}, max {hi:.4}", points.len())
                        }
                        None => "no logged steps".into(),
                    },
                    IntrospectionPayload::HistoTrendMatrix { steps, .. } => {
                        format!("histogram trend over {} steps", steps.len())
                    }
                };
                let _ = write!(out, "`{}` on `{}` of run `{}`: {detail}.\n\n", r.explainer_id, r.node, r.run_id);
            }
            Err(_) => json_block(out, p),
        },
        CardKind::Recommendation => {
            let title = p.get("title").and_then(|v| v.as_str());
            let rationale = p.get("rationale").and_then(|v| v.as_str());
            match (title, rationale) {
                (Some(t), Some(r)) => {
                    let _ = write!(out, "**{t}**\n\n{r}\n\n");
                    if let Some(refs) = p.get("references").and_then(|v| v.as_array()) {
                        for r in refs.iter().filter_map(|v| v.as_str()) {
                            let _ = writeln!(out, "- {r}");
                        }
                        if !refs.is_empty() {
                            out.push('\n');
                        }
                    }
                }
                _ => json_block(out, p),
            }
        }
        CardKind::Note => match p.get("text").and_then(|v| v.as_str()) {
            Some(t) => {
                let _ = write!(out, "{t}\n\n");
            }
            None => json_block(out, p),
        },
        CardKind::GraphSnapshot => {
            let nodes = p.get("nodes").and_then(|v| v.as_array()).map(|ns| {
                ns.iter()
                    .filter_map(|n| {
                        let name = n.get("name")?.as_str()?;
                        let kind = n.get("kind")?.as_str()?;
                        Some(format!("{name} ({kind})"))
                    })
                    .collect::<Vec<_>>()
            });
            match nodes {
                Some(ns) if !ns.is_empty() => {
                    let _ = write!(out, "{}\n\n", ns.join(" -> "));
                }
                _ => json_block(out, p),
            }
        }
    }
}

fn render_card(out: &mut String, card: &ProvenanceCard) {
    let _ = write!(out, "### {} ({})\n\n", card.card_id, card.kind.as_str());
    let s = &card.source;
    let mut origin = Vec::new();
    if let Some(v) = &s.state_id {
        origin.push(format!("state `{v}`"));
    }
    if let Some(v) = &s.explainer_id {
        origin.push(format!("explainer `{v}`"));
    }
    if let Some(v) = &s.sample {
        origin.push(format!("sample `{v}`"));
    }
    if !origin.is_empty() {
        let _ = writeln!(out, "Source: {}", origin.join(", "));
    }
    let _ = write!(out, "Saved: {}\n\n", card.created_at);
    card_summary(out, card);
    if !card.annotation.is_empty() {
        for line in card.annotation.lines() {
            let _ = writeln!(out, "> {line}");
        }
        out.push('\n');
    }
}

/// Markdown body of the report. Attribution cards link `cards/<id>.svg`.
pub fn render_markdown(report: &Report, store: &ProvenanceStore) -> Result<String> {
    report_cards(report, store)?;
    let mut out = format!("# {}\n", report.title);
    for section in &report.sections {
        let _ = write!(out, "\n## {}\n\n", section.heading);
        if !section.narrative.is_empty() {
            let _ = write!(out, "{}\n\n", section.narrative.trim_end());
        }
        for id in &section.card_ids {
            render_card(&mut out, store.get(id)?);
        }
        while out.ends_with("\n\n") {
            out.pop();
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct JsonExport<'a> {
    report: &'a Report,
    cards: Vec<&'a ProvenanceCard>,
}

/// Writes the export into `dir` (normally `workspace/reports/<report_id>`)
/// and returns the written paths relative to it.
pub fn export_report(report: &Report, store: &ProvenanceStore, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>> {
    let cards = report_cards(report, store)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |rel: String, bytes: &[u8]| -> Result<()> {
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_atomic(&path, bytes)?;
        written.push(PathBuf::from(rel));
        Ok(())
    };
    match format {
        ExportFormat::Json => {
            let mut body = serde_json::to_string_pretty(&JsonExport { report, cards }).expect("export serializes");
            body.push('\n');
            put("report.json".into(), body.as_bytes())?;
        }
        ExportFormat::Markdown | ExportFormat::SvgBundle => {
            if format == ExportFormat::Markdown {
                put("report.md".into(), render_markdown(report, store)?.as_bytes())?;
            }
            for card in cards {
                if let Some(svg) = card_svg(card) {
                    put(svg_rel_path(&card.card_id), svg.as_bytes())?;
                }
            }
        }
    }
    Ok(written)
}
