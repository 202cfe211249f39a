//! Builds a graph by hand, checks its shapes, runs forward and backward
//! passes and round-trips the model file.
//!
//! `cargo run -p workbench-core --example custom_graph`

use workbench::engine::{backward, forward};
use workbench::graph::{GraphDef, NodeDef, NodeOp};
use workbench::model::{Hyperparams, ModelState};
use workbench::modelfile;
use workbench::tensor::Tensor;

fn main() -> workbench::error::Result<()> {
    let graph = GraphDef::new(
        vec![6, 6, 1],
        3,
        vec![
            NodeDef::new("input", NodeOp::Input),
            NodeDef::new("conv", NodeOp::Conv2d { filters: 4, kernel_size: 3 }),
            NodeDef::new("relu", NodeOp::Relu),
            NodeDef::new("pool", NodeOp::MaxPool2),
            NodeDef::new("flatten", NodeOp::Flatten),
            NodeDef::new("logits", NodeOp::Dense { units: 3 }),
            NodeDef::new("softmax", NodeOp::Softmax),
        ],
    );
    for (node, shape) in graph.nodes.iter().zip(graph.validate()?) {
        println!("{:<8} {:<9} {shape:?}", node.name, node.kind().as_str());
    }

    let state = ModelState::initialize(graph, Hyperparams::default())?;
    println!("{} parameters, state {}", state.num_parameters(), state.state_id);

    let x = Tensor::new(vec![6, 6, 1], (0..36).map(|i| ((i * 7) % 11) as f64 / 10.0).collect())?;
    let pass = forward(&state, &x)?;
    println!("probabilities {:?}", pass.output().data);
    let grads = backward(&state, &x, pass.output().argmax())?;
    println!("input gradient l1 norm {:.4}", grads.input.data.iter().map(|g| g.abs()).sum::<f64>());
    for (name, g) in &grads.params {
        println!("d score / d {name}: {} weights", g.weights.len());
    }

    let path = std::env::temp_dir().join("custom_graph.emodel.json");
    modelfile::save_model(&state, &path)?;
    let back = modelfile::load_model(&path)?;
    assert_eq!(modelfile::to_json_bytes(&back), modelfile::to_json_bytes(&state));
    println!("model file {} round-trips", path.display());
    Ok(())
}
