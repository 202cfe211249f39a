//! Trains a small MLP on the bars8 set and reads the run log back.
//!
//! `cargo run -p workbench-core --example train_and_log`

use workbench::dataset::bars8;
use workbench::graph::GraphDef;
use workbench::model::{Hyperparams, ModelState};
use workbench::runlog::RunLog;
use workbench::train::train;

fn main() -> workbench::error::Result<()> {
    let data = bars8();
    let hp = Hyperparams {
        epochs: 10,
        ..Hyperparams::default()
    };
    let state = ModelState::initialize(GraphDef::mlp(data.input_shape.clone(), &[16], 2), hp)?;
    let dir = tempfile::tempdir().expect("temp dir");
    let out = train(&state, &data, &dir.path().join("run"), "run-example", |e| eprint!("\repoch {e}"))?;
    eprintln!();

    for (epoch, loss) in out.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  loss {loss:.4}", epoch + 1);
    }

    // everything below only touches the files on disk
    let run = RunLog::open(dir.path().join("run"))?;
    println!("logged nodes: {}", run.nodes().join(", "));
    for (step, stats) in run.read_stats_series("dense1/weights")? {
        println!("step {step:>4}  dense1/weights mean {:+.4} std {:.4}", stats.mean, stats.std);
    }
    println!("{} checkpoints, last at step {:?}", run.checkpoints().len(), run.last_step());
    Ok(())
}
