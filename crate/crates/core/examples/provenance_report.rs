//! Collects explanation and metrics cards in the provenance store and exports
//! them as a markdown report with card images.
//!
//! `cargo run -p workbench-core --example provenance_report -- [workspace]`

use serde_json::{json, Value};
use workbench::dataset::Split;
use workbench::model::Hyperparams;
use workbench::provenance::{CardKind, CardSource, NewCard};
use workbench::report::{ExportFormat, Section};
use workbench::workspace::{Arch, CreateState, ExplainRequest, Workspace};

fn main() -> workbench::error::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "report_workspace".into());
    let ws = Workspace::open(&root, None)?;
    let hp = Hyperparams {
        seed: 9,
        ..Hyperparams::default()
    };
    let state = ws.demo_train(&CreateState::new(Arch::Mlp, "bars8", hp), |_| {})?.state_id;

    let mut cards = Vec::new();
    for explainer in ["saliency", "lrp_epsilon"] {
        let map = ws.explain(&ExplainRequest {
            explainer: explainer.into(),
            state: state.clone(),
            sample: Value::String("misclassified".into()),
            target: None,
            params: Value::Null,
            dataset: None,
        })?;
        cards.push(ws.save_attribution_card(&map, None)?.card_id);
    }
    ws.annotate_card(&cards[0], "Attribution spreads over both bars; the MLP ignores their orientation.")?;
    ws.group_cards(&cards, "misclassified")?;

    let metrics = ws.evaluate(&state, Split::Test, None)?;
    let m = ws.add_card(NewCard {
        kind: CardKind::Metrics,
        payload: serde_json::to_value(&metrics).expect("serializable"),
        source: CardSource {
            state_id: Some(state.clone()),
            ..CardSource::default()
        },
        annotation: None,
        created_at: None,
    })?;
    let note = ws.add_card(NewCard {
        kind: CardKind::Note,
        payload: json!({ "text": "Next: try a convolutional front end." }),
        source: CardSource::default(),
        annotation: None,
        created_at: None,
    })?;

    let report = ws.assemble_report(
        "Why the MLP misreads bars",
        vec![
            Section::new("Diagnosis", cards.clone(), "Two explainers on the first misclassified test sample."),
            Section::new("Quality", vec![m.card_id, note.card_id], ""),
        ],
    )?;
    let exported = ws.export_report(&report.report_id, ExportFormat::Markdown)?;
    println!("{}", serde_json::to_string_pretty(&exported).expect("serializable"));
    Ok(())
}
