//! Network architectures as DAGs of layer nodes with exact unit-level shapes.
//!
//! Only the structure that matters for connectivity is modelled: weight
//! tensors of dense and conv layers (the prunable parameters) and the
//! parameter-free plumbing between them (pooling, flatten, residual adds).
//! Biases, normalization and activations are identities here and are left
//! out of the graph.

mod doc;
pub mod random;
pub mod zoo;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use doc::{ArchDoc, NodeDoc};

/// Output shape of a node: a flat vector of units or a `C×H×W` feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Flat(usize),
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Flat(u) => u,
            Shape::Spatial {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Flat(u) => write!(f, "{u}"),
            Shape::Spatial {
                channels,
                height,
                width,
            } => write!(f, "{channels}x{height}x{width}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub in_units: usize,
    pub out_units: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default = "one")]
    pub groups: usize,
}

impl Conv2d {
    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn kernel_area(&self) -> usize {
        self.kernel_h * self.kernel_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool2d {
    pub window: usize,
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default = "max_mode")]
    pub mode: PoolMode,
}

fn one() -> usize {
    1
}

fn max_mode() -> PoolMode {
    PoolMode::Max
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Input(Shape),
    Dense(Dense),
    Conv2d(Conv2d),
    Pool2d(Pool2d),
    Flatten,
    Add,
    Output,
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Input(_) => "input",
            NodeKind::Dense(_) => "dense",
            NodeKind::Conv2d(_) => "conv2d",
            NodeKind::Pool2d(_) => "pool2d",
            NodeKind::Flatten => "flatten",
            NodeKind::Add => "add",
            NodeKind::Output => "output",
        }
    }

    pub fn is_prunable(&self) -> bool {
        matches!(self, NodeKind::Dense(_) | NodeKind::Conv2d(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNode {
    pub id: String,
    pub kind: NodeKind,
    /// Indices of predecessor nodes in [`ArchGraph::nodes`].
    pub inputs: Vec<usize>,
    /// Output shape.
    pub shape: Shape,
}

/// A validated architecture graph.
///
/// Nodes are stored in topological order. Prunable layers (dense and conv)
/// are numbered `0..L` in that order; masks, weights and scores are indexed
/// by this layer index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchGraph {
    name: String,
    nodes: Vec<LayerNode>,
    successors: Vec<Vec<usize>>,
    prunable: Vec<usize>,
    param_counts: Vec<usize>,
    input: usize,
    output: usize,
}

impl ArchGraph {
    /// Parse and validate an architecture document (JSON).
    pub fn parse(text: &str) -> Result<ArchGraph> {
        let doc: ArchDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        ArchGraph::from_doc(doc)
    }

    pub fn from_doc(doc: ArchDoc) -> Result<ArchGraph> {
        validate(doc)
    }

    pub fn to_doc(&self) -> ArchDoc {
        ArchDoc::from_graph(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc())
            .expect("architecture documents always serialize")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &LayerNode {
        &self.nodes[idx]
    }

    pub fn successors(&self, idx: usize) -> &[usize] {
        &self.successors[idx]
    }

    pub fn input_node(&self) -> usize {
        self.input
    }

    pub fn output_node(&self) -> usize {
        self.output
    }

    /// Node indices of the prunable layers, in layer order.
    pub fn prunable(&self) -> &[usize] {
        &self.prunable
    }

    pub fn num_layers(&self) -> usize {
        self.prunable.len()
    }

    pub fn param_counts(&self) -> &[usize] {
        &self.param_counts
    }

    pub fn total_params(&self) -> usize {
        self.param_counts.iter().sum()
    }

    pub fn layer_node(&self, layer: usize) -> &LayerNode {
        &self.nodes[self.prunable[layer]]
    }

    pub fn layer_id(&self, layer: usize) -> &str {
        &self.layer_node(layer).id
    }

    pub fn layer_ids(&self) -> Vec<&str> {
        (0..self.num_layers()).map(|l| self.layer_id(l)).collect()
    }

    /// Layer index of the prunable node with this id.
    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.prunable.iter().position(|&n| self.nodes[n].id == id)
    }

    /// Weight tensor dimensions: `[out, in]` for dense, `[out, in/groups, kh, kw]` for conv.
    pub fn weight_dims(&self, layer: usize) -> Vec<usize> {
        match &self.layer_node(layer).kind {
            NodeKind::Dense(d) => vec![d.out_units, d.in_units],
            NodeKind::Conv2d(c) => vec![c.out_channels, c.in_per_group(), c.kernel_h, c.kernel_w],
            _ => unreachable!("prunable layers are dense or conv2d"),
        }
    }

    /// `(fan_in, fan_out)` of a prunable layer, counting receptive field size for conv.
    pub fn fans(&self, layer: usize) -> (usize, usize) {
        match &self.layer_node(layer).kind {
            NodeKind::Dense(d) => (d.in_units, d.out_units),
            NodeKind::Conv2d(c) => (
                c.in_per_group() * c.kernel_area(),
                c.out_channels * c.kernel_area(),
            ),
            _ => unreachable!("prunable layers are dense or conv2d"),
        }
    }

    /// Activation element count of every node, in node order.
    pub fn unit_counts(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.shape.numel()).collect()
    }

    pub fn has_add(&self) -> bool {
        self.nodes.iter().any(|n| n.kind == NodeKind::Add)
    }

    pub fn first_conv_layer(&self) -> Option<usize> {
        (0..self.num_layers()).find(|&l| matches!(self.layer_node(l).kind, NodeKind::Conv2d(_)))
    }

    pub fn last_dense_layer(&self) -> Option<usize> {
        (0..self.num_layers())
            .rev()
            .find(|&l| matches!(self.layer_node(l).kind, NodeKind::Dense(_)))
    }
}

fn validate(doc: ArchDoc) -> Result<ArchGraph> {
    let n = doc.nodes.len();
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(n);
    for (i, node) in doc.nodes.iter().enumerate() {
        if node.id.is_empty() {
            return Err(Error::validation("", "empty node id"));
        }
        if index.insert(node.id.as_str(), i).is_some() {
            return Err(Error::validation(&node.id, "duplicate node id"));
        }
    }

    let mut preds: Vec<Vec<usize>> = Vec::with_capacity(n);
    for node in &doc.nodes {
        let mut p = Vec::with_capacity(node.inputs.len());
        for input in &node.inputs {
            match index.get(input.as_str()) {
                Some(&j) => p.push(j),
                None => {
                    return Err(Error::validation(
                        &node.id,
                        format!("dangling predecessor `{input}`"),
                    ))
                }
            }
        }
        preds.push(p);
    }

    // Kahn's algorithm, releasing ready nodes in document order.
    let mut indegree: Vec<usize> = preds.iter().map(|p| p.len()).collect();
    let mut succ_doc: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, p) in preds.iter().enumerate() {
        for &j in p {
            succ_doc[j].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &s in &succ_doc[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n)
            .find(|&i| indegree[i] > 0)
            .expect("some node is left");
        return Err(Error::validation(&doc.nodes[stuck].id, "cycle detected"));
    }

    let mut position = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        position[i] = pos;
    }

    let mut nodes: Vec<LayerNode> = Vec::with_capacity(n);
    let mut input = None;
    let mut output = None;
    for &i in &order {
        let d = &doc.nodes[i];
        let inputs: Vec<usize> = preds[i].iter().map(|&j| position[j]).collect();
        let kind = d.kind.clone().into_kind(&d.id)?;
        let in_shapes: Vec<Shape> = inputs.iter().map(|&j| nodes[j].shape).collect();
        for &j in &inputs {
            if nodes[j].kind == NodeKind::Output {
                return Err(Error::validation(
                    &d.id,
                    "output node cannot feed other nodes",
                ));
            }
        }
        let shape = infer_shape(&d.id, &kind, &in_shapes)?;
        match kind {
            NodeKind::Input(_) if input.replace(nodes.len()).is_some() => {
                return Err(Error::validation(&d.id, "more than one input node"));
            }
            NodeKind::Output if output.replace(nodes.len()).is_some() => {
                return Err(Error::validation(&d.id, "more than one output node"));
            }
            _ => {}
        }
        nodes.push(LayerNode {
            id: d.id.clone(),
            kind,
            inputs,
            shape,
        });
    }
    let input = input.ok_or_else(|| Error::validation(&doc.name, "no input node"))?;
    let output = output.ok_or_else(|| Error::validation(&doc.name, "no output node"))?;

    let mut successors = vec![Vec::new(); n];
    for (i, node) in nodes.iter().enumerate() {
        for &j in &node.inputs {
            successors[j].push(i);
        }
    }

    // Every node must lie on an input -> output path of the unmasked graph.
    let mut from_input = vec![false; n];
    from_input[input] = true;
    for i in 0..n {
        if nodes[i].inputs.iter().any(|&j| from_input[j]) {
            from_input[i] = true;
        }
    }
    let mut to_output = vec![false; n];
    to_output[output] = true;
    for i in (0..n).rev() {
        if successors[i].iter().any(|&j| to_output[j]) {
            to_output[i] = true;
        }
    }
    if let Some(i) = (0..n).find(|&i| !(from_input[i] && to_output[i])) {
        return Err(Error::validation(
            &nodes[i].id,
            "node is not on any input-to-output path",
        ));
    }

    let prunable: Vec<usize> = (0..n).filter(|&i| nodes[i].kind.is_prunable()).collect();
    let param_counts: Vec<usize> = prunable
        .iter()
        .map(|&i| match &nodes[i].kind {
            NodeKind::Dense(d) => d.in_units * d.out_units,
            NodeKind::Conv2d(c) => c.out_channels * c.in_per_group() * c.kernel_area(),
            _ => unreachable!(),
        })
        .collect();
    if param_counts.iter().sum::<usize>() == 0 {
        return Err(Error::validation(
            &doc.name,
            "architecture has no prunable parameters",
        ));
    }

    Ok(ArchGraph {
        name: doc.name,
        nodes,
        successors,
        prunable,
        param_counts,
        input,
        output,
    })
}

fn single(id: &str, kind: &str, inputs: &[Shape]) -> Result<Shape> {
    match inputs {
        [s] => Ok(*s),
        _ => Err(Error::validation(
            id,
            format!(
                "{kind} node needs exactly 1 predecessor, got {}",
                inputs.len()
            ),
        )),
    }
}

fn spatial(id: &str, kind: &str, s: Shape) -> Result<(usize, usize, usize)> {
    match s {
        Shape::Spatial {
            channels,
            height,
            width,
        } => Ok((channels, height, width)),
        Shape::Flat(_) => Err(Error::validation(
            id,
            format!("{kind} expects a spatial input, got flat {s}"),
        )),
    }
}

fn window_out(
    id: &str,
    size: usize,
    window: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::validation(id, "stride must be positive"));
    }
    if window == 0 || window > size + 2 * padding {
        return Err(Error::validation(
            id,
            format!("window {window} does not fit input extent {size} with padding {padding}"),
        ));
    }
    Ok((size + 2 * padding - window) / stride + 1)
}

fn infer_shape(id: &str, kind: &NodeKind, inputs: &[Shape]) -> Result<Shape> {
    if !matches!(kind, NodeKind::Input(_)) && inputs.is_empty() {
        return Err(Error::validation(
            id,
            format!("{} node has no predecessor", kind.name()),
        ));
    }
    match kind {
        NodeKind::Input(shape) => {
            if !inputs.is_empty() {
                return Err(Error::validation(id, "input node cannot have predecessors"));
            }
            if shape.numel() == 0 {
                return Err(Error::validation(id, "input shape has zero units"));
            }
            Ok(*shape)
        }
        NodeKind::Dense(d) => {
            let s = single(id, "dense", inputs)?;
            match s {
                Shape::Flat(u) if u == d.in_units => {}
                Shape::Flat(u) => {
                    return Err(Error::validation(
                        id,
                        format!(
                            "in_units {} does not match predecessor units {u}",
                            d.in_units
                        ),
                    ))
                }
                Shape::Spatial { .. } => {
                    return Err(Error::validation(
                        id,
                        format!("dense expects a flat input, got {s}; insert a flatten node"),
                    ))
                }
            }
            if d.out_units == 0 {
                return Err(Error::validation(id, "out_units must be positive"));
            }
            Ok(Shape::Flat(d.out_units))
        }
        NodeKind::Conv2d(c) => {
            let (ch, h, w) = spatial(id, "conv2d", single(id, "conv2d", inputs)?)?;
            if ch != c.in_channels {
                return Err(Error::validation(
                    id,
                    format!(
                        "in_channels {} does not match predecessor channels {ch}",
                        c.in_channels
                    ),
                ));
            }
            if c.groups == 0 || c.in_channels % c.groups != 0 || c.out_channels % c.groups != 0 {
                return Err(Error::validation(
                    id,
                    format!(
                        "groups {} must divide in_channels and out_channels",
                        c.groups
                    ),
                ));
            }
            if c.out_channels == 0 {
                return Err(Error::validation(id, "out_channels must be positive"));
            }
            let oh = window_out(id, h, c.kernel_h, c.stride, c.padding)?;
            let ow = window_out(id, w, c.kernel_w, c.stride, c.padding)?;
            Ok(Shape::Spatial {
                channels: c.out_channels,
                height: oh,
                width: ow,
            })
        }
        NodeKind::Pool2d(p) => {
            let (ch, h, w) = spatial(id, "pool2d", single(id, "pool2d", inputs)?)?;
            if 2 * p.padding > p.window {
                return Err(Error::validation(
                    id,
                    "pool padding must be at most half the window",
                ));
            }
            Ok(Shape::Spatial {
                channels: ch,
                height: window_out(id, h, p.window, p.stride, p.padding)?,
                width: window_out(id, w, p.window, p.stride, p.padding)?,
            })
        }
        NodeKind::Flatten => Ok(Shape::Flat(single(id, "flatten", inputs)?.numel())),
        NodeKind::Add => {
            if inputs.len() < 2 {
                return Err(Error::validation(
                    id,
                    "add node needs at least 2 predecessors",
                ));
            }
            if inputs.iter().any(|s| *s != inputs[0]) {
                let shapes: Vec<String> = inputs.iter().map(|s| s.to_string()).collect();
                return Err(Error::validation(
                    id,
                    format!(
                        "add predecessors have different shapes: {}",
                        shapes.join(", ")
                    ),
                ));
            }
            Ok(inputs[0])
        }
        NodeKind::Output => single(id, "output", inputs),
    }
}
