//! Runs every attribution explainer on one test sample and writes a heatmap
//! per explainer.
//!
//! `cargo run -p workbench-core --example attribution_gallery -- [out_dir]`

use std::path::PathBuf;

use serde_json::Value;
use workbench::attribution::{explain, AttributionMethod, ATTRIBUTION_IDS};
use workbench::dataset::{bars8, Split};
use workbench::graph::GraphDef;
use workbench::heatmap::attribution_svg;
use workbench::model::{Hyperparams, ModelState};
use workbench::train::train;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "attribution_gallery".into()));
    std::fs::create_dir_all(&out_dir)?;

    let data = bars8();
    let hp = Hyperparams {
        epochs: 15,
        ..Hyperparams::default()
    };
    let init = ModelState::initialize(GraphDef::mlp(data.input_shape.clone(), &[16], 2), hp)?;
    let run_dir = tempfile::tempdir().expect("temp dir");
    let state = train(&init, &data, run_dir.path(), "run-gallery", |_| {})?.state;

    let sample = data.sample(Split::Test, 0)?;
    println!("test sample 0, label {}", sample.label);
    for id in ATTRIBUTION_IDS {
        let method = AttributionMethod::from_params(id, &Value::Null)?;
        let map = explain(&state, &sample.input, sample.label, &method)?;
        let path = out_dir.join(format!("{id}.svg"));
        std::fs::write(&path, attribution_svg(&map))?;
        println!("{id:<22} total {:+.4}  -> {}", map.total(), path.display());
    }
    Ok(())
}
