//! The refinement loop on a workspace: train an MLP, ask the advisor, apply
//! the conv patch, retrain and compare the two states.
//!
//! `cargo run -p workbench-core --example refinement_loop -- [workspace]`

use workbench::advisor::RuleId;
use workbench::dataset::Split;
use workbench::model::Hyperparams;
use workbench::workspace::{Arch, CreateState, Workspace};

fn main() -> workbench::error::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "refinement_workspace".into());
    let ws = Workspace::open(&root, None)?;
    let hp = Hyperparams {
        seed: 9,
        ..Hyperparams::default()
    };
    let mlp = ws.demo_train(&CreateState::new(Arch::Mlp, "bars8", hp), |_| {})?.state_id;
    println!("trained MLP {mlp}");

    let recs = ws.recommend(&mlp)?;
    for r in &recs {
        println!("  [{:?}] {}: {}", r.severity, r.rule_id.as_str(), r.title);
    }
    let patch = recs
        .iter()
        .find(|r| r.rule_id == RuleId::R1)
        .and_then(|r| r.transition.clone())
        .expect("a spatial MLP gets a conv recommendation");

    let cnn = ws.apply_transition(&mlp, &patch)?;
    let state = ws.get_state(&cnn)?;
    let retrain = workbench::train::retrain_transition(&state, "bars8");
    let trained = ws.apply_transition(&cnn, &retrain)?;
    println!("patched {cnn}, retrained {trained}");

    let cmp = ws.compare(&mlp, &trained, Split::Test, Some(0))?;
    println!(
        "test accuracy {:.3} -> {:.3}",
        cmp.metrics_a.accuracy, cmp.metrics_b.accuracy
    );
    println!("{}", serde_json::to_string_pretty(&cmp.metric_deltas).expect("serializable"));
    for node in ws.list_states() {
        println!("{} <- {:?}", node.state_id, node.parent);
    }
    Ok(())
}
