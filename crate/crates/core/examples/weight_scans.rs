//! Scans a training run for dead and saturated weights and prints the
//! re-binned histogram trend of the first dense layer.
//!
//! `cargo run -p workbench-core --example weight_scans`

use workbench::dataset::bars8;
use workbench::graph::GraphDef;
use workbench::introspection::{dead_weight, histo_trend, minmax, saturated_weight, IntrospectionPayload, ScanParams};
use workbench::model::{Hyperparams, ModelState};
use workbench::train::train;

fn main() -> workbench::error::Result<()> {
    let data = bars8();
    let hp = Hyperparams {
        epochs: 12,
        ..Hyperparams::default()
    };
    let init = ModelState::initialize(GraphDef::mlp(data.input_shape.clone(), &[16], 2), hp)?;
    let dir = tempfile::tempdir().expect("temp dir");
    let run = train(&init, &data, dir.path(), "run-scans", |_| {})?.run;

    for node in ["dense1", "logits"] {
        for (label, result) in [
            ("dead", dead_weight(&run, node, ScanParams::DEAD)?),
            ("saturated", saturated_weight(&run, node, ScanParams::SATURATED)?),
        ] {
            if let IntrospectionPayload::WeightScan { fraction, flagged_indices, .. } = result.payload {
                println!("{node:<7} {label:<9} {:>5.1}%  ({} weights)", fraction * 100.0, flagged_indices.len());
            }
        }
    }

    if let IntrospectionPayload::MinMaxSeries { points } = minmax(&run, "dense1/weights")?.payload {
        let (first, last) = (points[0], points[points.len() - 1]);
        println!("dense1/weights range {:+.3}..{:+.3} at step {}, {:+.3}..{:+.3} at step {}", first.1, first.2, first.0, last.1, last.2, last.0);
    }

    if let IntrospectionPayload::HistoTrendMatrix { edges, steps, counts } = histo_trend(&run, "dense1/weights")?.payload {
        println!("histogram trend over [{:.3}, {:.3}]", edges[0], edges[edges.len() - 1]);
        let peak = counts.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        for (step, row) in steps.iter().zip(&counts) {
            let shade: String = row
                .iter()
                .map(|c| match (c / peak * 4.0).round() as u32 {
                    0 => ' ',
                    1 => '.',
                    2 => ':',
                    3 => '*',
                    _ => '#',
                })
                .collect();
            println!("{step:>5} |{shade}|");
        }
    }
    Ok(())
}
