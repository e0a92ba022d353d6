//! Small random architectures, sized for the brute-force oracle.

use rand::Rng;
use serde_json::{json, Value};

use super::ArchGraph;

/// Limits for [`random_mlp`] and [`random_convnet`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSpec {
    pub max_dense_layers: usize,
    pub max_units: usize,
    pub max_conv_layers: usize,
    pub max_channels: usize,
    pub max_side: usize,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            max_dense_layers: 5,
            max_units: 64,
            max_conv_layers: 4,
            max_channels: 8,
            max_side: 12,
        }
    }
}

struct Nodes {
    list: Vec<Value>,
}

impl Nodes {
    fn push(&mut self, mut node: Value, inputs: &[&str]) -> String {
        let id = format!("n{}", self.list.len());
        node["id"] = json!(id);
        if !inputs.is_empty() {
            node["inputs"] = json!(inputs);
        }
        self.list.push(node);
        id
    }
}

fn finish(name: &str, nodes: Nodes) -> ArchGraph {
    let doc = json!({ "name": name, "nodes": nodes.list });
    ArchGraph::parse(&doc.to_string()).expect("generated architectures are valid")
}

/// A chain of 1 to `max_dense_layers` dense layers.
pub fn random_mlp<R: Rng + ?Sized>(rng: &mut R, spec: &RandomSpec) -> ArchGraph {
    let mut nodes = Nodes { list: Vec::new() };
    let mut width = rng.random_range(1..=spec.max_units);
    let mut prev = nodes.push(json!({"kind": "input", "units": width}), &[]);
    for _ in 0..rng.random_range(1..=spec.max_dense_layers) {
        let out = rng.random_range(1..=spec.max_units);
        prev = nodes.push(
            json!({"kind": "dense", "in_units": width, "out_units": out}),
            &[&prev],
        );
        width = out;
    }
    nodes.push(json!({"kind": "output"}), &[&prev]);
    finish("random-mlp", nodes)
}

/// Conv layers (some grouped, strided or padded), optional pooling and
/// residual adds, then flatten and one or two dense layers.
pub fn random_convnet<R: Rng + ?Sized>(rng: &mut R, spec: &RandomSpec) -> ArchGraph {
    let mut nodes = Nodes { list: Vec::new() };
    let mut c = rng.random_range(1..=spec.max_channels.min(3));
    let mut side = rng.random_range(4..=spec.max_side);
    let mut prev = nodes.push(
        json!({"kind": "input", "channels": c, "height": side, "width": side}),
        &[],
    );
    let mut convs = 0;
    let budget = rng.random_range(1..=spec.max_conv_layers);
    while convs < budget {
        let room = budget - convs;
        if rng.random_bool(0.3) {
            // same-shape branch joined by an add; optionally two conv branches
            let two = room >= 2 && rng.random_bool(0.4);
            let k = if rng.random_bool(0.5) { 3 } else { 1 };
            let a = nodes.push(
                json!({"kind": "conv2d", "in_channels": c, "out_channels": c,
                       "kernel_h": k, "kernel_w": k, "padding": k / 2}),
                &[&prev],
            );
            let b = if two {
                nodes.push(
                    json!({"kind": "conv2d", "in_channels": c, "out_channels": c,
                           "kernel_h": 1, "kernel_w": 1}),
                    &[&prev],
                )
            } else {
                prev.clone()
            };
            prev = nodes.push(json!({"kind": "add"}), &[&a, &b]);
            convs += 1 + usize::from(two);
            continue;
        }
        let out = rng.random_range(1..=spec.max_channels);
        let k = rng.random_range(1..=3usize.min(side));
        let pad = if k > 1 { rng.random_range(0..=1) } else { 0 };
        let stride = if side + 2 * pad - k >= 2 {
            rng.random_range(1..=2)
        } else {
            1
        };
        let groups = [2, 4]
            .into_iter()
            .filter(|g| c % g == 0 && out % g == 0)
            .find(|_| rng.random_bool(0.3))
            .unwrap_or(1);
        prev = nodes.push(
            json!({"kind": "conv2d", "in_channels": c, "out_channels": out,
                   "kernel_h": k, "kernel_w": k, "stride": stride,
                   "padding": pad, "groups": groups}),
            &[&prev],
        );
        c = out;
        side = (side + 2 * pad - k) / stride + 1;
        convs += 1;
        if side >= 2 && rng.random_bool(0.3) {
            let mode = if rng.random_bool(0.5) { "max" } else { "avg" };
            prev = nodes.push(
                json!({"kind": "pool2d", "window": 2, "mode": mode}),
                &[&prev],
            );
            side /= 2;
        }
    }
    prev = nodes.push(json!({"kind": "flatten"}), &[&prev]);
    let mut width = c * side * side;
    for _ in 0..rng.random_range(1..=2) {
        let out = rng.random_range(1..=10);
        prev = nodes.push(
            json!({"kind": "dense", "in_units": width, "out_units": out}),
            &[&prev],
        );
        width = out;
    }
    nodes.push(json!({"kind": "output"}), &[&prev]);
    finish("random-convnet", nodes)
}
