use super::AttributionMap;
use crate::engine::{self, forward, maxpool_argmax};
use crate::error::{Error, Result};
use crate::graph::NodeOp;
use crate::model::{ModelState, NodeParams};
use crate::tensor::Tensor;

fn stabilized(z: f64, epsilon: f64) -> f64 {
    let sign = if z >= 0.0 { 1.0 } else { -1.0 };
    z + epsilon * sign
}

fn ratio(r: f64, denom: f64) -> f64 {
    if denom == 0.0 {
        0.0
    } else {
        r / denom
    }
}

/// Epsilon rule through a dense layer. `z` is the layer's pre-activation
/// (bias included).
fn dense_relevance(a: &Tensor, p: &NodeParams, units: usize, z: &Tensor, r: &Tensor, eps: f64) -> Tensor {
    let s: Vec<f64> = (0..units).map(|j| ratio(r.data[j], stabilized(z.data[j], eps))).collect();
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(i, &ai)| {
            let row = &p.weights.data[i * units..(i + 1) * units];
            ai * row.iter().zip(&s).map(|(w, sj)| w * sj).sum::<f64>()
        })
        .collect();
    Tensor {
        shape: a.shape.clone(),
        data,
    }
}

fn conv_relevance(a: &Tensor, p: &NodeParams, filters: usize, k: usize, z: &Tensor, r: &Tensor, eps: f64) -> Tensor {
    let (w, c) = (a.shape[1], a.shape[2]);
    let (oh, ow) = (z.shape[0], z.shape[1]);
    let s: Vec<f64> = z
        .data
        .iter()
        .zip(&r.data)
        .map(|(&zj, &rj)| ratio(rj, stabilized(zj, eps)))
        .collect();
    let mut out = Tensor::zeros(&a.shape);
    for oi in 0..oh {
        for oj in 0..ow {
            let so = &s[(oi * ow + oj) * filters..(oi * ow + oj + 1) * filters];
            for di in 0..k {
                for dj in 0..k {
                    for ci in 0..c {
                        let xi = ((oi + di) * w + oj + dj) * c + ci;
                        let wbase = ((di * k + dj) * c + ci) * filters;
                        let acc: f64 = (0..filters).map(|f| p.weights.data[wbase + f] * so[f]).sum();
                        out.data[xi] += a.data[xi] * acc;
                    }
                }
            }
        }
    }
    out
}

/// Layer-wise relevance propagation with the epsilon rule. The relevance of
/// the target class starts as its pre-softmax score; relu passes relevance
/// through unchanged and maxpool routes it to the window maximum.
pub fn lrp_epsilon(state: &ModelState, x: &Tensor, target: usize, epsilon: f64) -> Result<AttributionMap> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::InvalidParam("epsilon must be non-negative".into()));
    }
    engine::check_target(state, target)?;
    let pass = forward(state, x)?;
    let top = pass.logits_index();
    let score = pass.logits().data[target];
    let mut r = Tensor::zeros(&pass.activations[top].shape);
    r.data[target] = score;
    let mut layer_totals = Vec::new();
    for i in (1..=top).rev() {
        let node = &state.graph.nodes[i];
        let a = &pass.activations[i - 1];
        let z = &pass.activations[i];
        r = match node.op {
            NodeOp::Input | NodeOp::Softmax => unreachable!("interior nodes only"),
            NodeOp::Dense { units } => dense_relevance(a, &state.parameters[&node.name], units, z, &r, epsilon),
            NodeOp::Conv2d {
                filters,
                kernel_size,
            } => conv_relevance(a, &state.parameters[&node.name], filters, kernel_size, z, &r, epsilon),
            NodeOp::Relu => r,
            NodeOp::Flatten => r.reshaped(a.shape.clone()),
            NodeOp::MaxPool2 => {
                let mut out = Tensor::zeros(&a.shape);
                for (o, idx) in maxpool_argmax(a).into_iter().enumerate() {
                    out.data[idx] += r.data[o];
                }
                out
            }
        };
        layer_totals.push(serde_json::json!([node.name, r.sum()]));
    }
    let gap = r.sum() - score;
    Ok(AttributionMap::new("lrp_epsilon", state, target, r, pass.output())
        .with_meta("epsilon", epsilon)
        .with_meta("score", score)
        .with_meta("conservation_gap", gap)
        .with_meta("layer_totals", layer_totals))
}
