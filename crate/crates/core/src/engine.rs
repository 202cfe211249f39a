//! Forward evaluation and reverse-mode gradients over a [`ModelState`].
//!
//! Activations use height x width x channel layout, row-major. Dense weights
//! are `[inputs, units]`, conv weights `[k, k, in_channels, filters]`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::NodeOp;
use crate::model::{ModelState, NodeParams};
use crate::tensor::Tensor;

/// Activations of one forward pass, one tensor per node (the input node's
/// activation is the input itself).
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub activations: Vec<Tensor>,
    logits_index: usize,
}

impl ForwardPass {
    /// Output of the last node (class probabilities when the graph ends in
    /// softmax).
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("at least the input node")
    }

    /// Pre-softmax class scores.
    pub fn logits(&self) -> &Tensor {
        &self.activations[self.logits_index]
    }

    pub fn logits_index(&self) -> usize {
        self.logits_index
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub input: Tensor,
    pub params: BTreeMap<String, NodeParams>,
}

pub fn check_input(state: &ModelState, input: &Tensor) -> Result<()> {
    if input.shape != state.graph.input_shape {
        return Err(Error::InvalidInput(format!(
            "input shape {:?} does not match graph input shape {:?}",
            input.shape, state.graph.input_shape
        )));
    }
    input.validate()
}

pub fn forward(state: &ModelState, input: &Tensor) -> Result<ForwardPass> {
    check_input(state, input)?;
    Ok(forward_unchecked(state, input))
}

pub(crate) fn forward_unchecked(state: &ModelState, input: &Tensor) -> ForwardPass {
    let nodes = &state.graph.nodes;
    let mut activations: Vec<Tensor> = Vec::with_capacity(nodes.len());
    activations.push(input.clone());
    for node in &nodes[1..] {
        let x = activations.last().expect("input pushed");
        let y = match node.op {
            NodeOp::Input => unreachable!("validated graphs have one leading input"),
            NodeOp::Dense { units } => dense_forward(x, &state.parameters[&node.name], units),
            NodeOp::Conv2d {
                filters,
                kernel_size,
            } => conv_forward(x, &state.parameters[&node.name], filters, kernel_size),
            NodeOp::Relu => x.map(|v| v.max(0.0)),
            NodeOp::Flatten => x.clone().reshaped(vec![x.len()]),
            NodeOp::MaxPool2 => maxpool_forward(x),
            NodeOp::Softmax => softmax(x),
        };
        activations.push(y);
    }
    ForwardPass {
        activations,
        logits_index: state.graph.logits_index(),
    }
}

/// Pre-softmax score of class `target`.
pub fn score(state: &ModelState, input: &Tensor, target: usize) -> Result<f64> {
    check_target(state, target)?;
    Ok(forward(state, input)?.logits().data[target])
}

pub fn predict(state: &ModelState, input: &Tensor) -> Result<usize> {
    Ok(forward(state, input)?.logits().argmax())
}

pub fn check_target(state: &ModelState, target: usize) -> Result<()> {
    if target >= state.graph.num_classes {
        return Err(Error::InvalidInput(format!(
            "target class {target} out of range for {} classes",
            state.graph.num_classes
        )));
    }
    Ok(())
}

/// Gradient of the pre-softmax score of `target` with respect to the input
/// and every parameter tensor.
pub fn backward(state: &ModelState, input: &Tensor, target: usize) -> Result<Gradients> {
    check_target(state, target)?;
    let pass = forward(state, input)?;
    let mut seed = vec![0.0; state.graph.num_classes];
    seed[target] = 1.0;
    Ok(backward_from(state, &pass, &seed))
}

/// Reverse pass starting from an arbitrary gradient on the logits.
pub fn backward_from(state: &ModelState, pass: &ForwardPass, logit_grad: &[f64]) -> Gradients {
    let nodes = &state.graph.nodes;
    let top = pass.logits_index;
    let mut grad = Tensor {
        shape: pass.activations[top].shape.clone(),
        data: logit_grad.to_vec(),
    };
    let mut params = BTreeMap::new();
    for i in (1..=top).rev() {
        let node = &nodes[i];
        let x = &pass.activations[i - 1];
        grad = match node.op {
            NodeOp::Input | NodeOp::Softmax => unreachable!("only interior nodes below the logits"),
            NodeOp::Dense { units } => {
                let p = &state.parameters[&node.name];
                let (dx, dp) = dense_backward(x, p, units, &grad);
                params.insert(node.name.clone(), dp);
                dx
            }
            NodeOp::Conv2d {
                filters,
                kernel_size,
            } => {
                let p = &state.parameters[&node.name];
                let (dx, dp) = conv_backward(x, p, filters, kernel_size, &grad);
                params.insert(node.name.clone(), dp);
                dx
            }
            NodeOp::Relu => x.zip_map(&grad, |xv, g| if xv > 0.0 { g } else { 0.0 }),
            NodeOp::Flatten => grad.reshaped(x.shape.clone()),
            NodeOp::MaxPool2 => maxpool_backward(x, &grad),
        };
    }
    Gradients {
        input: grad,
        params,
    }
}

pub fn softmax(x: &Tensor) -> Tensor {
    let m = x.max();
    let exps: Vec<f64> = x.data.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor {
        shape: x.shape.clone(),
        data: exps.into_iter().map(|e| e / total).collect(),
    }
}

fn dense_forward(x: &Tensor, p: &NodeParams, units: usize) -> Tensor {
    let mut out = p.bias.data.clone();
    for (i, &xi) in x.data.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &p.weights.data[i * units..(i + 1) * units];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
    Tensor::vector(out)
}

fn dense_backward(x: &Tensor, p: &NodeParams, units: usize, g: &Tensor) -> (Tensor, NodeParams) {
    let n = x.len();
    let mut dw = vec![0.0; n * units];
    let mut dx = vec![0.0; n];
    for i in 0..n {
        let row = &p.weights.data[i * units..(i + 1) * units];
        let drow = &mut dw[i * units..(i + 1) * units];
        let mut acc = 0.0;
        for j in 0..units {
            drow[j] = x.data[i] * g.data[j];
            acc += row[j] * g.data[j];
        }
        dx[i] = acc;
    }
    (
        Tensor {
            shape: x.shape.clone(),
            data: dx,
        },
        NodeParams {
            weights: Tensor {
                shape: p.weights.shape.clone(),
                data: dw,
            },
            bias: g.clone(),
        },
    )
}

fn conv_forward(x: &Tensor, p: &NodeParams, filters: usize, k: usize) -> Tensor {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; oh * ow * filters];
    for oi in 0..oh {
        for oj in 0..ow {
            let o = &mut out[(oi * ow + oj) * filters..(oi * ow + oj + 1) * filters];
            o.copy_from_slice(&p.bias.data);
            for di in 0..k {
                for dj in 0..k {
                    for ci in 0..c {
                        let xv = x.data[((oi + di) * w + oj + dj) * c + ci];
                        let wbase = ((di * k + dj) * c + ci) * filters;
                        let wrow = &p.weights.data[wbase..wbase + filters];
                        for (ov, &wv) in o.iter_mut().zip(wrow) {
                            *ov += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![oh, ow, filters],
        data: out,
    }
}

fn conv_backward(
    x: &Tensor,
    p: &NodeParams,
    filters: usize,
    k: usize,
    g: &Tensor,
) -> (Tensor, NodeParams) {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; p.weights.len()];
    let mut db = vec![0.0; filters];
    for oi in 0..oh {
        for oj in 0..ow {
            let go = &g.data[(oi * ow + oj) * filters..(oi * ow + oj + 1) * filters];
            for (b, &gv) in db.iter_mut().zip(go) {
                *b += gv;
            }
            for di in 0..k {
                for dj in 0..k {
                    for ci in 0..c {
                        let xi = ((oi + di) * w + oj + dj) * c + ci;
                        let wbase = ((di * k + dj) * c + ci) * filters;
                        let mut acc = 0.0;
                        for f in 0..filters {
                            dw[wbase + f] += x.data[xi] * go[f];
                            acc += p.weights.data[wbase + f] * go[f];
                        }
                        dx[xi] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor {
            shape: x.shape.clone(),
            data: dx,
        },
        NodeParams {
            weights: Tensor {
                shape: p.weights.shape.clone(),
                data: dw,
            },
            bias: Tensor::vector(db),
        },
    )
}

/// Flat index into `x` of the max element of each 2x2 pooling window
/// (first maximum in row-major order on ties).
pub(crate) fn maxpool_argmax(x: &Tensor) -> Vec<usize> {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (ph, pw) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(ph * pw * c);
    for pi in 0..ph {
        for pj in 0..pw {
            for ci in 0..c {
                let mut best = (2 * pi * w + 2 * pj) * c + ci;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = ((2 * pi + di) * w + 2 * pj + dj) * c + ci;
                    if x.data[cand] > x.data[best] {
                        best = cand;
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

fn maxpool_forward(x: &Tensor) -> Tensor {
    let data = maxpool_argmax(x).into_iter().map(|i| x.data[i]).collect();
    Tensor {
        shape: vec![x.shape[0] / 2, x.shape[1] / 2, x.shape[2]],
        data,
    }
}

fn maxpool_backward(x: &Tensor, g: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(&x.shape);
    for (o, i) in maxpool_argmax(x).into_iter().enumerate() {
        dx.data[i] += g.data[o];
    }
    dx
}
