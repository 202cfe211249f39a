//! Chain-shaped computational graphs and their shape inference.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const GRAPH_VERSION: u32 = 1;

/// Operation carried by a graph node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeOp {
    Input,
    Dense { units: usize },
    /// Valid padding, stride 1.
    Conv2d { filters: usize, kernel_size: usize },
    Relu,
    Flatten,
    /// 2x2 window, stride 2.
    MaxPool2,
    Softmax,
}

impl NodeOp {
    pub fn kind(&self) -> NodeKind {
        match self {
            NodeOp::Input => NodeKind::Input,
            NodeOp::Dense { .. } => NodeKind::Dense,
            NodeOp::Conv2d { .. } => NodeKind::Conv2d,
            NodeOp::Relu => NodeKind::Relu,
            NodeOp::Flatten => NodeKind::Flatten,
            NodeOp::MaxPool2 => NodeKind::MaxPool2,
            NodeOp::Softmax => NodeKind::Softmax,
        }
    }

    pub fn trainable(&self) -> bool {
        self.kind().trainable()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Input,
    Dense,
    Conv2d,
    Relu,
    Flatten,
    #[serde(rename = "maxpool2")]
    MaxPool2,
    Softmax,
}

impl NodeKind {
    pub const ALL: [NodeKind; 7] = [
        NodeKind::Input,
        NodeKind::Dense,
        NodeKind::Conv2d,
        NodeKind::Relu,
        NodeKind::Flatten,
        NodeKind::MaxPool2,
        NodeKind::Softmax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Dense => "dense",
            NodeKind::Conv2d => "conv2d",
            NodeKind::Relu => "relu",
            NodeKind::Flatten => "flatten",
            NodeKind::MaxPool2 => "maxpool2",
            NodeKind::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        NodeKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn trainable(self) -> bool {
        matches!(self, NodeKind::Dense | NodeKind::Conv2d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "NodeDefRepr", into = "NodeDefRepr")]
pub struct NodeDef {
    pub name: String,
    pub op: NodeOp,
    /// Name of the predecessor node. Optional in files; when present it must
    /// name the immediately preceding node.
    pub input: Option<String>,
}

impl NodeDef {
    pub fn new(name: impl Into<String>, op: NodeOp) -> Self {
        NodeDef {
            name: name.into(),
            op,
            input: None,
        }
    }

    pub fn kind(&self) -> NodeKind {
        self.op.kind()
    }

    pub fn trainable(&self) -> bool {
        self.op.trainable()
    }
}

#[derive(Serialize, Deserialize)]
struct NodeDefRepr {
    name: String,
    kind: NodeKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    params: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    #[serde(default)]
    trainable: Option<bool>,
}

impl TryFrom<NodeDefRepr> for NodeDef {
    type Error = String;

    fn try_from(r: NodeDefRepr) -> std::result::Result<Self, String> {
        let get = |key: &str| {
            r.params
                .get(key)
                .copied()
                .ok_or_else(|| format!("node {:?}: missing param {key:?}", r.name))
        };
        let op = match r.kind {
            NodeKind::Input => NodeOp::Input,
            NodeKind::Dense => NodeOp::Dense {
                units: get("units")?,
            },
            NodeKind::Conv2d => NodeOp::Conv2d {
                filters: get("filters")?,
                kernel_size: get("kernel_size")?,
            },
            NodeKind::Relu => NodeOp::Relu,
            NodeKind::Flatten => NodeOp::Flatten,
            NodeKind::MaxPool2 => NodeOp::MaxPool2,
            NodeKind::Softmax => NodeOp::Softmax,
        };
        if let Some(t) = r.trainable {
            if t != op.trainable() {
                return Err(format!(
                    "node {:?}: trainable flag disagrees with kind {}",
                    r.name,
                    r.kind.as_str()
                ));
            }
        }
        Ok(NodeDef {
            name: r.name,
            op,
            input: r.input,
        })
    }
}

impl From<NodeDef> for NodeDefRepr {
    fn from(n: NodeDef) -> Self {
        let mut params = BTreeMap::new();
        match n.op {
            NodeOp::Dense { units } => {
                params.insert("units".to_string(), units);
            }
            NodeOp::Conv2d {
                filters,
                kernel_size,
            } => {
                params.insert("filters".to_string(), filters);
                params.insert("kernel_size".to_string(), kernel_size);
            }
            _ => {}
        }
        NodeDefRepr {
            name: n.name,
            kind: n.op.kind(),
            params,
            input: n.input,
            trainable: Some(n.op.trainable()),
        }
    }
}

/// Feed-forward model definition. Nodes form a chain: node `i` consumes the
/// output of node `i - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDef {
    #[serde(default = "default_version")]
    pub version: u32,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub nodes: Vec<NodeDef>,
}

fn default_version() -> u32 {
    GRAPH_VERSION
}

/// Shapes of the weight and bias tensors of a trainable node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShapes {
    pub weights: Vec<usize>,
    pub bias: Vec<usize>,
    pub fan_in: usize,
}

impl GraphDef {
    pub fn new(input_shape: Vec<usize>, num_classes: usize, nodes: Vec<NodeDef>) -> Self {
        let mut g = GraphDef {
            version: GRAPH_VERSION,
            input_shape,
            num_classes,
            nodes,
        };
        g.link_inputs();
        g
    }

    /// Fills every node's `input` with its predecessor's name.
    pub fn link_inputs(&mut self) {
        for i in 0..self.nodes.len() {
            self.nodes[i].input = if i == 0 {
                None
            } else {
                Some(self.nodes[i - 1].name.clone())
            };
        }
    }

    /// `input -> flatten -> [dense(h) -> relu]* -> dense(classes) -> softmax`.
    pub fn mlp(input_shape: Vec<usize>, hidden: &[usize], num_classes: usize) -> Self {
        let mut nodes = vec![NodeDef::new("input", NodeOp::Input)];
        if input_shape.len() != 1 {
            nodes.push(NodeDef::new("flatten", NodeOp::Flatten));
        }
        for (i, &units) in hidden.iter().enumerate() {
            nodes.push(NodeDef::new(format!("dense{}", i + 1), NodeOp::Dense { units }));
            nodes.push(NodeDef::new(format!("relu{}", i + 1), NodeOp::Relu));
        }
        nodes.push(NodeDef::new(
            "logits",
            NodeOp::Dense {
                units: num_classes,
            },
        ));
        nodes.push(NodeDef::new("softmax", NodeOp::Softmax));
        GraphDef::new(input_shape, num_classes, nodes)
    }

    /// The MLP with one conv block inserted after the input.
    pub fn cnn(
        input_shape: Vec<usize>,
        filters: usize,
        kernel_size: usize,
        hidden: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        let mut g = GraphDef::mlp(input_shape, hidden, num_classes);
        g.insert_conv_block("input", filters, kernel_size)?;
        Ok(g)
    }

    /// Inserts `[conv2d(filters, k), relu, maxpool2]` after `after`. A flatten
    /// is added after the block if the following node needs a vector.
    pub fn insert_conv_block(&mut self, after: &str, filters: usize, kernel_size: usize) -> Result<()> {
        let pos = self
            .position(after)
            .ok_or_else(|| Error::InvalidPatch(format!("no node named {after:?}")))?;
        if self.nodes[pos].kind() == NodeKind::Softmax {
            return Err(Error::InvalidPatch("cannot insert after softmax".into()));
        }
        let base = self.fresh_name("conv");
        let block = [
            NodeDef::new(
                base.clone(),
                NodeOp::Conv2d {
                    filters,
                    kernel_size,
                },
            ),
            NodeDef::new(format!("{base}_relu"), NodeOp::Relu),
            NodeDef::new(format!("{base}_pool"), NodeOp::MaxPool2),
        ];
        let mut nodes = self.nodes.clone();
        let next_kind = nodes.get(pos + 1).map(|n| n.kind());
        let needs_flatten = matches!(next_kind, Some(NodeKind::Dense) | Some(NodeKind::Softmax) | None);
        let mut insert_at = pos + 1;
        for n in block {
            nodes.insert(insert_at, n);
            insert_at += 1;
        }
        if needs_flatten {
            let name = self.fresh_name("flatten");
            nodes.insert(insert_at, NodeDef::new(name, NodeOp::Flatten));
        }
        let mut candidate = GraphDef {
            version: self.version,
            input_shape: self.input_shape.clone(),
            num_classes: self.num_classes,
            nodes,
        };
        candidate.link_inputs();
        candidate
            .validate()
            .map_err(|e| Error::InvalidPatch(format!("patched graph is invalid: {e}")))?;
        *self = candidate;
        Ok(())
    }

    fn fresh_name(&self, stem: &str) -> String {
        (1..)
            .map(|i| format!("{stem}{i}"))
            .find(|n| self.position(n).is_none())
            .expect("unbounded search")
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&NodeDef> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn kinds(&self) -> Vec<NodeKind> {
        self.nodes.iter().map(NodeDef::kind).collect()
    }

    pub fn has_kind(&self, kind: NodeKind) -> bool {
        self.nodes.iter().any(|n| n.kind() == kind)
    }

    pub fn trainable_nodes(&self) -> impl Iterator<Item = &NodeDef> {
        self.nodes.iter().filter(|n| n.trainable())
    }

    /// Index of the node whose output is the pre-softmax class score vector.
    pub fn logits_index(&self) -> usize {
        match self.nodes.last() {
            Some(n) if n.kind() == NodeKind::Softmax => self.nodes.len() - 2,
            _ => self.nodes.len() - 1,
        }
    }

    /// Checks every structural invariant and returns the output shape of
    /// each node.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        let corrupt = |m: String| Error::CorruptModel(m);
        if self.version != GRAPH_VERSION {
            return Err(Error::UnsupportedFormat(format!(
                "graph version {} (supported: {GRAPH_VERSION})",
                self.version
            )));
        }
        if self.nodes.is_empty() {
            return Err(corrupt("graph has no nodes".into()));
        }
        if self.num_classes == 0 {
            return Err(corrupt("num_classes must be positive".into()));
        }
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if n.name.is_empty() {
                return Err(corrupt("node with empty name".into()));
            }
            if !seen.insert(n.name.as_str()) {
                return Err(corrupt(format!("duplicate node name {:?}", n.name)));
            }
        }
        let inputs = self.nodes.iter().filter(|n| n.kind() == NodeKind::Input).count();
        if inputs != 1 || self.nodes[0].kind() != NodeKind::Input {
            return Err(corrupt("graph needs exactly one input node, placed first".into()));
        }
        for (i, n) in self.nodes.iter().enumerate().skip(1) {
            if let Some(src) = &n.input {
                match self.position(src) {
                    None => return Err(corrupt(format!("node {:?} reads unknown node {src:?}", n.name))),
                    Some(j) if j >= i => {
                        return Err(corrupt(format!(
                            "topological order violation: node {:?} reads {src:?} which comes later",
                            n.name
                        )))
                    }
                    Some(j) if j + 1 != i => {
                        return Err(corrupt(format!(
                            "node {:?} must read its predecessor, not {src:?}",
                            n.name
                        )))
                    }
                    _ => {}
                }
            }
        }
        if self.nodes[0].input.is_some() {
            return Err(corrupt("input node cannot have a predecessor".into()));
        }
        if let Some(i) = self.nodes.iter().position(|n| n.kind() == NodeKind::Softmax) {
            if i + 1 != self.nodes.len() {
                return Err(corrupt("softmax must be the output node".into()));
            }
            if i == 1 {
                return Err(corrupt("softmax needs a score-producing predecessor".into()));
            }
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(corrupt(format!("bad input shape {:?}", self.input_shape)));
        }

        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let prev = shapes.last().cloned();
            let shape = match (n.op, prev) {
                (NodeOp::Input, _) => self.input_shape.clone(),
                (_, None) => unreachable!("input node is first"),
                (NodeOp::Dense { units }, Some(p)) => {
                    if p.len() != 1 {
                        return Err(corrupt(format!("dense {:?} needs a vector input, got {p:?}", n.name)));
                    }
                    if units == 0 {
                        return Err(corrupt(format!("dense {:?} has zero units", n.name)));
                    }
                    vec![units]
                }
                (
                    NodeOp::Conv2d {
                        filters,
                        kernel_size,
                    },
                    Some(p),
                ) => {
                    if p.len() != 3 {
                        return Err(corrupt(format!("conv2d {:?} needs HxWxC input, got {p:?}", n.name)));
                    }
                    if kernel_size == 0 || kernel_size % 2 == 0 {
                        return Err(corrupt(format!("conv2d {:?}: kernel size must be odd", n.name)));
                    }
                    if filters == 0 {
                        return Err(corrupt(format!("conv2d {:?} has zero filters", n.name)));
                    }
                    if p[0] < kernel_size || p[1] < kernel_size {
                        return Err(corrupt(format!(
                            "conv2d {:?}: kernel {kernel_size} larger than input {p:?}",
                            n.name
                        )));
                    }
                    vec![p[0] - kernel_size + 1, p[1] - kernel_size + 1, filters]
                }
                (NodeOp::Relu, Some(p)) => p,
                (NodeOp::Flatten, Some(p)) => vec![p.iter().product()],
                (NodeOp::MaxPool2, Some(p)) => {
                    if p.len() != 3 || p[0] < 2 || p[1] < 2 {
                        return Err(corrupt(format!("maxpool2 {:?} needs HxWxC input of at least 2x2, got {p:?}", n.name)));
                    }
                    vec![p[0] / 2, p[1] / 2, p[2]]
                }
                (NodeOp::Softmax, Some(p)) => {
                    if p.len() != 1 {
                        return Err(corrupt("softmax needs a vector input".into()));
                    }
                    p
                }
            };
            shapes.push(shape);
        }
        let out = shapes.last().expect("nonempty");
        if out.len() != 1 || out[0] != self.num_classes {
            return Err(corrupt(format!(
                "output shape {out:?} does not match num_classes {}",
                self.num_classes
            )));
        }
        Ok(shapes)
    }

    /// Parameter shapes for every trainable node, keyed by node name.
    pub fn param_shapes(&self) -> Result<BTreeMap<String, ParamShapes>> {
        let shapes = self.validate()?;
        let mut out = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let input = &shapes[i.saturating_sub(1)];
            match n.op {
                NodeOp::Dense { units } => {
                    out.insert(
                        n.name.clone(),
                        ParamShapes {
                            weights: vec![input[0], units],
                            bias: vec![units],
                            fan_in: input[0],
                        },
                    );
                }
                NodeOp::Conv2d {
                    filters,
                    kernel_size,
                } => {
                    out.insert(
                        n.name.clone(),
                        ParamShapes {
                            weights: vec![kernel_size, kernel_size, input[2], filters],
                            bias: vec![filters],
                            fan_in: kernel_size * kernel_size * input[2],
                        },
                    );
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Stable hex digest of the graph structure.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("graph serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
