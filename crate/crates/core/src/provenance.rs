//! Append-only store of provenance cards and reports.
//!
//! Every mutation is one JSON line in `provenance.jsonl`; replaying the log
//! reconstructs the store. Deletes are tombstones. A torn final line (from a
//! crash mid-write) is ignored on load.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::report::{Report, Section};

pub const PROVENANCE_FILE: &str = "provenance.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardKind {
    Attribution,
    Introspection,
    Metrics,
    Comparison,
    Recommendation,
    Note,
    GraphSnapshot,
}

impl CardKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CardKind::Attribution => "attribution",
            CardKind::Introspection => "introspection",
            CardKind::Metrics => "metrics",
            CardKind::Comparison => "comparison",
            CardKind::Recommendation => "recommendation",
            CardKind::Note => "note",
            CardKind::GraphSnapshot => "graph_snapshot",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explainer_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceCard {
    pub card_id: String,
    pub created_at: String,
    pub kind: CardKind,
    /// Full copy of the saved result.
    pub payload: Value,
    pub annotation: String,
    /// Every annotation ever set, oldest first; the last one is `annotation`.
    pub annotation_history: Vec<String>,
    pub group_id: Option<String>,
    pub source: CardSource,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardFilter {
    #[serde(default)]
    pub kind: Option<CardKind>,
    #[serde(default)]
    pub group_id: Option<String>,
    #[serde(default)]
    pub state_id: Option<String>,
}

impl CardFilter {
    pub fn matches(&self, c: &ProvenanceCard) -> bool {
        self.kind.is_none_or(|k| k == c.kind)
            && self.group_id.as_ref().is_none_or(|g| c.group_id.as_ref() == Some(g))
            && self.state_id.as_ref().is_none_or(|s| c.source.state_id.as_ref() == Some(s))
    }
}

/// New card contents; the store assigns the id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewCard {
    pub kind: CardKind,
    pub payload: Value,
    #[serde(default)]
    pub source: CardSource,
    #[serde(default)]
    pub annotation: Option<String>,
    /// Defaults to the current UTC time.
    #[serde(default)]
    pub created_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Entry {
    Add { card: ProvenanceCard },
    Annotate { card_id: String, text: String },
    Group { card_ids: Vec<String>, group_id: String },
    Delete { card_id: String },
    Report { report: Report },
}

#[derive(Debug)]
pub struct ProvenanceStore {
    path: PathBuf,
    /// Live cards in insertion order.
    cards: Vec<ProvenanceCard>,
    reports: BTreeMap<String, Report>,
    /// Number of cards ever added, including deleted ones.
    added: u64,
}

impl ProvenanceStore {
    pub fn open(workspace: impl AsRef<Path>) -> Result<Self> {
        let dir = workspace.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(PROVENANCE_FILE);
        let mut store = ProvenanceStore {
            path: path.clone(),
            cards: Vec::new(),
            reports: BTreeMap::new(),
            added: 0,
        };
        if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            for (i, line) in lines.iter().enumerate() {
                match serde_json::from_str::<Entry>(line) {
                    Ok(entry) => store.replay(entry)?,
                    Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => {}
                    Err(e) => {
                        return Err(Error::InvalidInput(format!(
                            "{}: line {}: {e}",
                            path.display(),
                            i + 1
                        )))
                    }
                }
            }
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn position(&self, card_id: &str) -> Result<usize> {
        self.cards
            .iter()
            .position(|c| c.card_id == card_id)
            .ok_or_else(|| Error::NotFound(format!("card {card_id:?}")))
    }

    fn replay(&mut self, entry: Entry) -> Result<()> {
        match entry {
            Entry::Add { card } => {
                self.added += 1;
                self.cards.push(card);
            }
            Entry::Annotate { card_id, text } => {
                let i = self.position(&card_id)?;
                let c = &mut self.cards[i];
                c.annotation = text.clone();
                c.annotation_history.push(text);
            }
            Entry::Group { card_ids, group_id } => {
                for id in &card_ids {
                    let i = self.position(id)?;
                    self.cards[i].group_id = Some(group_id.clone());
                }
            }
            Entry::Delete { card_id } => {
                let i = self.position(&card_id)?;
                self.cards.remove(i);
            }
            Entry::Report { report } => {
                self.reports.insert(report.report_id.clone(), report);
            }
        }
        Ok(())
    }

    /// Validates `entry` against the current state, persists it, then applies it.
    fn commit(&mut self, entry: Entry) -> Result<()> {
        let mut line = serde_json::to_string(&entry).expect("entries serialize");
        line.push('\n');
        let mut f: File = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))?;
        self.replay(entry)
    }

    pub fn add_card(&mut self, new: NewCard) -> Result<ProvenanceCard> {
        if new.payload.is_null() {
            return Err(Error::InvalidInput("card payload must not be null".into()));
        }
        let created_at = new
            .created_at
            .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
        let annotation_history: Vec<String> = new.annotation.iter().cloned().collect();
        let card = ProvenanceCard {
            card_id: format!("card-{}", self.added + 1),
            created_at,
            kind: new.kind,
            payload: new.payload,
            annotation: new.annotation.unwrap_or_default(),
            annotation_history,
            group_id: None,
            source: new.source,
        };
        self.commit(Entry::Add { card: card.clone() })?;
        Ok(card)
    }

    pub fn annotate(&mut self, card_id: &str, text: &str) -> Result<&ProvenanceCard> {
        let i = self.position(card_id)?;
        self.commit(Entry::Annotate {
            card_id: card_id.into(),
            text: text.into(),
        })?;
        Ok(&self.cards[i])
    }

    pub fn group(&mut self, card_ids: &[String], group_id: &str) -> Result<()> {
        for id in card_ids {
            self.position(id)?;
        }
        self.commit(Entry::Group {
            card_ids: card_ids.to_vec(),
            group_id: group_id.into(),
        })
    }

    /// Removes a card unless a stored report references it.
    pub fn delete_card(&mut self, card_id: &str) -> Result<()> {
        self.position(card_id)?;
        if let Some(r) = self.reports.values().find(|r| r.card_ids().any(|c| c == card_id)) {
            return Err(Error::DanglingReference(format!(
                "card {card_id:?} is referenced by report {:?}",
                r.report_id
            )));
        }
        self.commit(Entry::Delete {
            card_id: card_id.into(),
        })
    }

    pub fn get(&self, card_id: &str) -> Result<&ProvenanceCard> {
        Ok(&self.cards[self.position(card_id)?])
    }

    pub fn list(&self, filter: &CardFilter) -> Vec<&ProvenanceCard> {
        self.cards.iter().filter(|c| filter.matches(c)).collect()
    }

    pub fn cards(&self) -> &[ProvenanceCard] {
        &self.cards
    }

    /// Builds a report over existing cards and stores it.
    pub fn assemble_report(&mut self, title: &str, sections: Vec<Section>) -> Result<Report> {
        let report = Report::new(title, sections);
        let live: BTreeSet<&str> = self.cards.iter().map(|c| c.card_id.as_str()).collect();
        if let Some(missing) = report.card_ids().find(|id| !live.contains(id)) {
            return Err(Error::DanglingReference(format!(
                "report references unknown card {missing:?}"
            )));
        }
        if !self.reports.contains_key(&report.report_id) {
            self.commit(Entry::Report { report: report.clone() })?;
        }
        Ok(report)
    }

    pub fn report(&self, report_id: &str) -> Result<&Report> {
        self.reports
            .get(report_id)
            .ok_or_else(|| Error::NotFound(format!("report {report_id:?}")))
    }

    pub fn reports(&self) -> impl Iterator<Item = &Report> {
        self.reports.values()
    }
}
