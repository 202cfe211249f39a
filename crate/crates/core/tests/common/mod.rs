//! Test oracles and generators shared by integration tests.
//!
//! The forward pass here is a deliberately naive re-implementation that
//! shares no code with the engine, so it can serve as ground truth for
//! activations, finite differences and relevance bookkeeping.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use workbench::graph::{GraphDef, NodeDef, NodeOp};
use workbench::model::{Hyperparams, ModelState};
use workbench::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn n(name: &str, op: NodeOp) -> NodeDef {
    NodeDef::new(name, op)
}

/// One of five architecture families mixing dense, conv, relu and maxpool.
pub fn random_graph(r: &mut ChaCha8Rng) -> GraphDef {
    let classes = r.random_range(2..=4);
    let hw = r.random_range(6..=8);
    let c = r.random_range(1..=2);
    let f = r.random_range(2..=4);
    let units = r.random_range(3..=7);
    let (shape, nodes) = match r.random_range(0..5) {
        0 => (
            vec![hw, hw, c],
            vec![
                n("input", NodeOp::Input),
                n("conv1", NodeOp::Conv2d { filters: f, kernel_size: 3 }),
                n("relu1", NodeOp::Relu),
                n("pool1", NodeOp::MaxPool2),
                n("flatten", NodeOp::Flatten),
                n("dense1", NodeOp::Dense { units }),
                n("relu2", NodeOp::Relu),
                n("logits", NodeOp::Dense { units: classes }),
                n("softmax", NodeOp::Softmax),
            ],
        ),
        1 => (
            vec![hw, hw + 1, c],
            vec![
                n("input", NodeOp::Input),
                n("conv1", NodeOp::Conv2d { filters: f, kernel_size: 3 }),
                n("relu1", NodeOp::Relu),
                n("conv2", NodeOp::Conv2d { filters: 2, kernel_size: 1 }),
                n("relu2", NodeOp::Relu),
                n("flatten", NodeOp::Flatten),
                n("logits", NodeOp::Dense { units: classes }),
            ],
        ),
        2 => (
            vec![r.random_range(3..=12)],
            vec![
                n("input", NodeOp::Input),
                n("dense1", NodeOp::Dense { units }),
                n("relu1", NodeOp::Relu),
                n("dense2", NodeOp::Dense { units: units + 1 }),
                n("relu2", NodeOp::Relu),
                n("logits", NodeOp::Dense { units: classes }),
                n("softmax", NodeOp::Softmax),
            ],
        ),
        3 => (
            vec![hw, hw, c],
            vec![
                n("input", NodeOp::Input),
                n("pool0", NodeOp::MaxPool2),
                n("conv1", NodeOp::Conv2d { filters: f, kernel_size: 3 }),
                n("relu1", NodeOp::Relu),
                n("flatten", NodeOp::Flatten),
                n("logits", NodeOp::Dense { units: classes }),
                n("softmax", NodeOp::Softmax),
            ],
        ),
        _ => (
            vec![hw - 2, hw - 2, c],
            vec![
                n("input", NodeOp::Input),
                n("flatten", NodeOp::Flatten),
                n("dense1", NodeOp::Dense { units }),
                n("relu1", NodeOp::Relu),
                n("logits", NodeOp::Dense { units: classes }),
                n("softmax", NodeOp::Softmax),
            ],
        ),
    };
    GraphDef::new(shape, classes, nodes)
}

/// Initialized model with small random biases so bias paths are exercised.
pub fn model_for(graph: GraphDef, r: &mut ChaCha8Rng) -> ModelState {
    let hp = Hyperparams {
        seed: r.random(),
        ..Hyperparams::default()
    };
    let mut s = ModelState::initialize(graph, hp).expect("valid random graph");
    for p in s.parameters.values_mut() {
        for b in &mut p.bias.data {
            *b = r.random_range(-0.1..0.1);
        }
    }
    s.state_id = s.content_id();
    s
}

pub fn random_model(r: &mut ChaCha8Rng) -> ModelState {
    let g = random_graph(r);
    model_for(g, r)
}

pub fn random_input(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Activation of every node, as `(shape, data)`, computed with plain loops.
pub fn ref_forward(s: &ModelState, x: &Tensor) -> Vec<(Vec<usize>, Vec<f64>)> {
    let mut acts: Vec<(Vec<usize>, Vec<f64>)> = vec![(x.shape.clone(), x.data.clone())];
    for node in s.graph.nodes.iter().skip(1) {
        let (shape, a) = acts.last().unwrap().clone();
        let next = match node.op {
            NodeOp::Input => unreachable!(),
            NodeOp::Dense { units } => {
                let p = &s.parameters[&node.name];
                let mut out = p.bias.data.clone();
                for (i, ai) in a.iter().enumerate() {
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += ai * p.weights.data[i * units + j];
                    }
                }
                (vec![units], out)
            }
            NodeOp::Conv2d { filters, kernel_size: k } => {
                let p = &s.parameters[&node.name];
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h - k + 1, w - k + 1);
                let mut out = vec![0.0; oh * ow * filters];
                for i in 0..oh {
                    for j in 0..ow {
                        for f in 0..filters {
                            let mut acc = p.bias.data[f];
                            for di in 0..k {
                                for dj in 0..k {
                                    for ch in 0..c {
                                        acc += a[((i + di) * w + j + dj) * c + ch]
                                            * p.weights.data[((di * k + dj) * c + ch) * filters + f];
                                    }
                                }
                            }
                            out[(i * ow + j) * filters + f] = acc;
                        }
                    }
                }
                (vec![oh, ow, filters], out)
            }
            NodeOp::Relu => (shape, a.iter().map(|v| v.max(0.0)).collect()),
            NodeOp::Flatten => (vec![a.len()], a),
            NodeOp::MaxPool2 => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0; oh * ow * c];
                for i in 0..oh {
                    for j in 0..ow {
                        for ch in 0..c {
                            let mut best = f64::NEG_INFINITY;
                            for di in 0..2 {
                                for dj in 0..2 {
                                    best = best.max(a[((2 * i + di) * w + 2 * j + dj) * c + ch]);
                                }
                            }
                            out[(i * ow + j) * c + ch] = best;
                        }
                    }
                }
                (vec![oh, ow, c], out)
            }
            NodeOp::Softmax => {
                let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                (shape, e.iter().map(|v| v / z).collect())
            }
        };
        acts.push(next);
    }
    acts
}

/// Index of the node producing class scores (the softmax input, if any).
pub fn ref_logits_index(s: &ModelState) -> usize {
    let last = s.graph.nodes.len() - 1;
    if matches!(s.graph.nodes[last].op, NodeOp::Softmax) {
        last - 1
    } else {
        last
    }
}

pub fn ref_score(s: &ModelState, x: &Tensor, target: usize) -> f64 {
    ref_forward(s, x)[ref_logits_index(s)].1[target]
}

/// Distance of the forward pass from any kink: the smallest relu input
/// magnitude and the smallest gap between the two largest values of a
/// maxpool window.
pub fn kink_margin(s: &ModelState, x: &Tensor) -> f64 {
    let acts = ref_forward(s, x);
    let mut margin = f64::INFINITY;
    for (i, node) in s.graph.nodes.iter().enumerate().skip(1) {
        let (shape, a) = &acts[i - 1];
        match node.op {
            NodeOp::Relu => {
                for v in a {
                    margin = margin.min(v.abs());
                }
            }
            NodeOp::MaxPool2 => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                for i in 0..h / 2 {
                    for j in 0..w / 2 {
                        for ch in 0..c {
                            let mut v: Vec<f64> = (0..4)
                                .map(|q| a[((2 * i + q / 2) * w + 2 * j + q % 2) * c + ch])
                                .collect();
                            v.sort_by(|p, q| q.partial_cmp(p).unwrap());
                            margin = margin.min(v[0] - v[1]);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    margin
}

/// Central difference of `f` around `v[i]`.
pub fn central_diff(v: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = v[i];
    v[i] = orig + h;
    let up = f(v);
    v[i] = orig - h;
    let down = f(v);
    v[i] = orig;
    (up - down) / (2.0 * h)
}

/// Relative error with a floor on the denominator for near-zero gradients.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error over all input and parameter gradients.
pub fn max_fd_error(s: &ModelState, x: &Tensor, target: usize, h: f64) -> f64 {
    let g = workbench::engine::backward(s, x, target).unwrap();
    let mut worst: f64 = 0.0;
    let mut xv = x.data.clone();
    for i in 0..xv.len() {
        let num = central_diff(&mut xv, i, h, |v| {
            ref_score(s, &Tensor::new(x.shape.clone(), v.to_vec()).unwrap(), target)
        });
        worst = worst.max(rel_err(g.input.data[i], num));
    }
    for (name, p) in &s.parameters {
        let ga = &g.params[name];
        for (which, len) in [(0, p.weights.data.len()), (1, p.bias.data.len())] {
            for i in 0..len {
                let mut m = s.clone();
                let mut vals = if which == 0 { p.weights.data.clone() } else { p.bias.data.clone() };
                let num = central_diff(&mut vals, i, h, |v| {
                    let t = m.parameters.get_mut(name).unwrap();
                    if which == 0 {
                        t.weights.data.copy_from_slice(v);
                    } else {
                        t.bias.data.copy_from_slice(v);
                    }
                    ref_score(&m, x, target)
                });
                let a = if which == 0 { ga.weights.data[i] } else { ga.bias.data[i] };
                worst = worst.max(rel_err(a, num));
            }
        }
    }
    worst
}

/// Draws an input whose forward pass stays at least `margin` from every
/// kink; returns it with the number of rejected draws.
pub fn smooth_input(s: &ModelState, r: &mut ChaCha8Rng, margin: f64) -> (Tensor, usize) {
    for rejected in 0..1000 {
        let x = random_input(r, &s.graph.input_shape);
        if kink_margin(s, &x) >= margin {
            return (x, rejected);
        }
    }
    panic!("no input away from kinks after 1000 draws");
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// `input[n] -> logits(dense)`, with `weights[i][c]` and `bias[c]`.
pub fn linear_model(weights: &[Vec<f64>], bias: &[f64]) -> ModelState {
    let n = weights.len();
    let classes = bias.len();
    let g = GraphDef::new(
        vec![n],
        classes,
        vec![
            NodeDef::new("input", NodeOp::Input),
            NodeDef::new("logits", NodeOp::Dense { units: classes }),
        ],
    );
    let mut s = ModelState::initialize(g, Hyperparams::default()).unwrap();
    let p = s.parameters.get_mut("logits").unwrap();
    p.weights.data = weights.iter().flatten().copied().collect();
    p.bias.data = bias.to_vec();
    s.state_id = s.content_id();
    s
}

/// Dense/relu chain `input[sizes[0]] -> dense -> relu -> ... -> logits`
/// with weights drawn by `w` and biases by `b`.
pub fn dense_chain(
    sizes: &[usize],
    r: &mut ChaCha8Rng,
    mut w: impl FnMut(&mut ChaCha8Rng) -> f64,
    mut b: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> ModelState {
    let mut nodes = vec![NodeDef::new("input", NodeOp::Input)];
    let last = sizes.len() - 1;
    for (i, &units) in sizes.iter().enumerate().skip(1) {
        let name = if i == last { "logits".to_string() } else { format!("dense{i}") };
        nodes.push(NodeDef::new(name, NodeOp::Dense { units }));
        if i != last {
            nodes.push(NodeDef::new(format!("relu{i}"), NodeOp::Relu));
        }
    }
    let g = GraphDef::new(vec![sizes[0]], sizes[last], nodes);
    let mut s = ModelState::initialize(g, Hyperparams::default()).unwrap();
    for p in s.parameters.values_mut() {
        for v in &mut p.weights.data {
            *v = w(r);
        }
        for v in &mut p.bias.data {
            *v = b(r);
        }
    }
    s.state_id = s.content_id();
    s
}

/// Reference epsilon-LRP for dense/relu chains. Returns the input relevance
/// and the leak bound `sum over layers of sum_j |R_j (b_j + eps*sign z_j) / (z_j + eps*sign z_j)|`,
/// the relevance absorbed by biases and stabilisers.
pub fn ref_lrp_dense(s: &ModelState, x: &Tensor, target: usize, eps: f64) -> (Vec<f64>, f64) {
    let acts = ref_forward(s, x);
    let top = ref_logits_index(s);
    let mut r = vec![0.0; acts[top].1.len()];
    r[target] = acts[top].1[target];
    let mut bound = 0.0;
    for i in (1..=top).rev() {
        let node = &s.graph.nodes[i];
        let a = &acts[i - 1].1;
        r = match node.op {
            NodeOp::Relu | NodeOp::Flatten => r,
            NodeOp::Dense { units } => {
                let p = &s.parameters[&node.name];
                let z = &acts[i].1;
                let mut next = vec![0.0; a.len()];
                for j in 0..units {
                    let stab = eps * if z[j] >= 0.0 { 1.0 } else { -1.0 };
                    let denom = z[j] + stab;
                    if denom == 0.0 {
                        continue;
                    }
                    bound += (r[j] * (p.bias.data[j] + stab) / denom).abs();
                    for (ii, ai) in a.iter().enumerate() {
                        next[ii] += ai * p.weights.data[ii * units + j] / denom * r[j];
                    }
                }
                next
            }
            _ => panic!("dense chains only"),
        };
    }
    (r, bound)
}

/// Weighted ridge with unpenalized intercept, solved by Gaussian elimination
/// on the normal equations. Returns `(intercept, coefficients)`.
pub fn ref_weighted_ridge(masks: &[Vec<bool>], y: &[f64], w: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let k = masks[0].len() + 1;
    let mut a = vec![vec![0.0; k + 1]; k];
    for ((m, &yi), &wi) in masks.iter().zip(y).zip(w) {
        let row: Vec<f64> = std::iter::once(1.0).chain(m.iter().map(|&b| if b { 1.0 } else { 0.0 })).collect();
        for p in 0..k {
            for q in 0..k {
                a[p][q] += wi * row[p] * row[q];
            }
            a[p][k] += wi * row[p] * yi;
        }
    }
    for (p, row) in a.iter_mut().enumerate().skip(1) {
        row[p] += lambda;
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        for row in 0..k {
            if row != col {
                let f = a[row][col] / a[col][col];
                let pivot = a[col].clone();
                for (x, p) in a[row].iter_mut().zip(&pivot).skip(col) {
                    *x -= f * p;
                }
            }
        }
    }
    let sol: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
    (sol[0], sol[1..].to_vec())
}

/// Fills `store` with a fixed set of cards and assembles a two-section report.
/// Every value, including timestamps, is fixed, so exports are reproducible.
pub fn report_fixture(store: &mut workbench::provenance::ProvenanceStore) -> workbench::report::Report {
    use serde_json::json;
    use workbench::dataset::Split;
    use workbench::metrics::MetricsSnapshot;
    use workbench::provenance::{CardKind, CardSource, NewCard};
    use workbench::report::Section;

    let mut model = linear_model(
        &[vec![0.5, -0.5], vec![-1.0, 1.0], vec![0.25, 0.0], vec![0.0, 2.0]],
        &[0.0, 0.1],
    );
    model.graph.input_shape = vec![2, 2, 1];
    let x = Tensor::new(vec![2, 2, 1], vec![1.0, 0.0, 0.5, -0.25]).unwrap();
    let map = workbench::attribution::saliency(&model, &x, 1).unwrap();
    let source = CardSource {
        state_id: Some("s-fixture00001".into()),
        explainer_id: Some("saliency".into()),
        sample: Some("test:3".into()),
    };
    let at = |i: u32| Some(format!("2026-03-0{i}T10:00:00Z"));
    let a = store
        .add_card(NewCard {
            kind: CardKind::Attribution,
            payload: serde_json::to_value(&map).unwrap(),
            source,
            annotation: Some("The model looks at the wrong corner.".into()),
            created_at: at(1),
        })
        .unwrap();
    store
        .annotate(&a.card_id, "The model looks at the wrong corner.\nBottom-right pixel dominates.")
        .unwrap();
    let metrics = MetricsSnapshot::from_confusion("s-fixture00001", Split::Test, vec![vec![45, 5], vec![3, 47]], 0.215);
    let m = store
        .add_card(NewCard {
            kind: CardKind::Metrics,
            payload: serde_json::to_value(&metrics).unwrap(),
            source: CardSource {
                state_id: Some("s-fixture00001".into()),
                ..CardSource::default()
            },
            annotation: None,
            created_at: at(2),
        })
        .unwrap();
    let scan = store
        .add_card(NewCard {
            kind: CardKind::Introspection,
            payload: json!({
                "explainer_id": "dead_weight", "run_id": "run-fixture", "node": "dense1",
                "payload": {"type": "weight_scan", "fraction": 0.25, "flagged_indices": [1, 5], "total": 8,
                            "threshold": 0.001, "delta": 0.0001, "window": 5, "steps": [40, 50]}
            }),
            source: CardSource::default(),
            annotation: Some("Two dead weights.".into()),
            created_at: at(3),
        })
        .unwrap();
    let rec = store
        .add_card(NewCard {
            kind: CardKind::Recommendation,
            payload: json!({
                "rec_id": "R1-s-fixture00001", "rule_id": "R1", "title": "Add a convolutional block",
                "rationale": "Spatial input without convolution.", "references": ["https://example.org/conv"],
                "transition": null, "severity": "strong"
            }),
            source: CardSource::default(),
            annotation: None,
            created_at: at(4),
        })
        .unwrap();
    let note = store
        .add_card(NewCard {
            kind: CardKind::Note,
            payload: json!({"text": "Retrain with a convolution next."}),
            source: CardSource::default(),
            annotation: None,
            created_at: at(5),
        })
        .unwrap();
    store.group(&[a.card_id.clone(), m.card_id.clone()], "baseline").unwrap();
    store
        .assemble_report(
            "Why the MLP fails",
            vec![
                Section::new("Diagnosis", vec![a.card_id, m.card_id, scan.card_id], "The baseline misreads bars."),
                Section::new("Refinement", vec![rec.card_id, note.card_id], ""),
            ],
        )
        .unwrap()
}
