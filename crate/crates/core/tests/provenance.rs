mod common;

use std::fs;
use std::path::Path;

use common::*;
use serde_json::json;
use workbench::error::ErrorCode;
use workbench::provenance::*;
use workbench::report::*;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/report.md");

fn note(text: &str) -> NewCard {
    NewCard {
        kind: CardKind::Note,
        payload: json!({ "text": text }),
        source: CardSource::default(),
        annotation: None,
        created_at: None,
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(tree(&p));
        } else {
            out.push((p.display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn cards_append_in_order_and_keep_annotation_history() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ProvenanceStore::open(dir.path()).unwrap();
    let a = store.add_card(note("first")).unwrap();
    let b = store.add_card(note("second")).unwrap();
    assert_eq!(store.list(&CardFilter::default()).last().unwrap().card_id, b.card_id);
    store.annotate(&a.card_id, "one").unwrap();
    let c = store.annotate(&a.card_id, "two").unwrap();
    assert_eq!(c.annotation, "two");
    assert_eq!(c.annotation_history, vec!["one", "two"]);
    assert_eq!(store.annotate("card-99", "x").unwrap_err().code(), ErrorCode::NotFound);
    assert_eq!(store.group(&["card-99".into()], "g").unwrap_err().code(), ErrorCode::NotFound);
}

#[test]
fn store_survives_restart_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ProvenanceStore::open(dir.path()).unwrap();
    let report = report_fixture(&mut store);
    store.add_card(NewCard {
        kind: CardKind::Note,
        payload: json!({ "text": "awkward floats", "values": [0.1, 1e-300, -0.0, 1.0000000000000002] }),
        source: CardSource::default(),
        annotation: None,
        created_at: None,
    })
    .unwrap();
    let cards: Vec<ProvenanceCard> = store.cards().to_vec();
    drop(store);
    let reopened = ProvenanceStore::open(dir.path()).unwrap();
    assert_eq!(reopened.cards(), cards.as_slice());
    assert_eq!(
        serde_json::to_string(reopened.cards()).unwrap(),
        serde_json::to_string(&cards).unwrap()
    );
    assert_eq!(reopened.report(&report.report_id).unwrap(), &report);
}

#[test]
fn filters_select_by_kind_group_and_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ProvenanceStore::open(dir.path()).unwrap();
    report_fixture(&mut store);
    let by_kind = store.list(&CardFilter { kind: Some(CardKind::Note), ..CardFilter::default() });
    assert_eq!(by_kind.len(), 1);
    let by_group = store.list(&CardFilter { group_id: Some("baseline".into()), ..CardFilter::default() });
    assert_eq!(by_group.iter().map(|c| c.card_id.as_str()).collect::<Vec<_>>(), ["card-1", "card-2"]);
    let by_state = store.list(&CardFilter { state_id: Some("s-fixture00001".into()), ..CardFilter::default() });
    assert_eq!(by_state.len(), 2);
}

#[test]
fn dangling_references_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ProvenanceStore::open(dir.path()).unwrap();
    let a = store.add_card(note("kept")).unwrap();
    let err = store
        .assemble_report("r", vec![Section::new("s", vec!["card-7".into()], "")])
        .unwrap_err();
    assert_eq!(err.code(), ErrorCode::DanglingReference);
    store.assemble_report("r", vec![Section::new("s", vec![a.card_id.clone()], "")]).unwrap();
    assert_eq!(store.delete_card(&a.card_id).unwrap_err().code(), ErrorCode::DanglingReference);
    let b = store.add_card(note("free")).unwrap();
    store.delete_card(&b.card_id).unwrap();
    assert_eq!(store.get(&b.card_id).unwrap_err().code(), ErrorCode::NotFound);
    // ids are never reused after a delete
    assert_eq!(store.add_card(note("next")).unwrap().card_id, "card-3");
    let reopened = ProvenanceStore::open(dir.path()).unwrap();
    assert_eq!(reopened.cards().len(), 2);
}

#[test]
fn empty_report_exports_title_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ProvenanceStore::open(dir.path()).unwrap();
    let report = store.assemble_report("Nothing yet", vec![]).unwrap();
    let out = dir.path().join("out");
    for format in [ExportFormat::Json, ExportFormat::Markdown, ExportFormat::SvgBundle] {
        export_report(&report, &store, &out, format).unwrap();
    }
    assert_eq!(fs::read_to_string(out.join("report.md")).unwrap(), "# Nothing yet\n");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["report"]["title"], "Nothing yet");
    assert_eq!(json["cards"], json!([]));
}

#[test]
fn attribution_card_embeds_heatmap_and_annotation() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ProvenanceStore::open(dir.path()).unwrap();
    let report = report_fixture(&mut store);
    let out = dir.path().join("out");
    let files = export_report(&report, &store, &out, ExportFormat::Markdown).unwrap();
    assert!(files.iter().any(|f| f.ends_with("cards/card-1.svg")));
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("![card-1 heatmap](cards/card-1.svg)"));
    assert!(md.contains("> Bottom-right pixel dominates."));
    let svg = fs::read_to_string(out.join("cards/card-1.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(card_svg(store.get("card-1").unwrap()).unwrap(), svg);
}

#[test]
fn repeated_exports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ProvenanceStore::open(dir.path()).unwrap();
    let report = report_fixture(&mut store);
    let mut trees = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("out{i}"));
        for format in [ExportFormat::Json, ExportFormat::Markdown, ExportFormat::SvgBundle] {
            export_report(&report, &store, &out, format).unwrap();
        }
        let t: Vec<_> = tree(&out)
            .into_iter()
            .map(|(p, b)| (p.replace(&format!("out{i}"), "out"), b))
            .collect();
        trees.push(t);
    }
    assert_eq!(trees[0], trees[1]);
    assert_eq!(trees[0].len(), 3);
}

#[test]
fn markdown_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ProvenanceStore::open(dir.path()).unwrap();
    let report = report_fixture(&mut store);
    let md = render_markdown(&report, &store).unwrap();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(GOLDEN, &md).unwrap();
    }
    assert_eq!(md, fs::read_to_string(GOLDEN).unwrap());
}

#[test]
fn export_format_names() {
    assert_eq!(ExportFormat::parse("md").unwrap(), ExportFormat::Markdown);
    assert_eq!(ExportFormat::parse("svg_bundle").unwrap(), ExportFormat::SvgBundle);
    assert_eq!(ExportFormat::parse("pdf").unwrap_err().code(), ErrorCode::UnsupportedFormat);
}
