//! Brute-force effective sparsity: expand the masked network into an explicit
//! unit-level edge list and run two breadth-first searches.
//!
//! This deliberately shares no propagation code with the sweep-based
//! implementation; only the validated graph and its shapes are reused.

use std::collections::VecDeque;

use crate::arch::{ArchGraph, NodeKind, Shape};
use crate::error::{Error, Result};
use crate::tensor::MaskSet;

use super::{ConnectivityReport, LayerCounts};

pub const DEFAULT_ORACLE_UNITS: usize = 100_000;

struct Edge {
    src: usize,
    dst: usize,
    /// `(layer, flat index)` of the weight carried by this edge, if any.
    param: Option<(usize, usize)>,
}

fn dims(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Flat(u) => (u, 1, 1),
        Shape::Spatial {
            channels,
            height,
            width,
        } => (channels, height, width),
    }
}

fn expand(arch: &ArchGraph, mask: &MaskSet) -> Vec<Edge> {
    let mut offset = Vec::with_capacity(arch.nodes().len());
    let mut acc = 0;
    for n in arch.nodes() {
        offset.push(acc);
        acc += n.shape.numel();
    }
    let mut layer = 0;
    let mut edges = Vec::new();
    for (i, node) in arch.nodes().iter().enumerate() {
        let out0 = offset[i];
        match &node.kind {
            NodeKind::Input(_) => {}
            NodeKind::Dense(d) => {
                let in0 = offset[node.inputs[0]];
                let m = mask.layer(layer);
                for o in 0..d.out_units {
                    for j in 0..d.in_units {
                        let flat = o * d.in_units + j;
                        if m[flat] {
                            edges.push(Edge {
                                src: in0 + j,
                                dst: out0 + o,
                                param: Some((layer, flat)),
                            });
                        }
                    }
                }
                layer += 1;
            }
            NodeKind::Conv2d(c) => {
                let p = node.inputs[0];
                let in0 = offset[p];
                let (_, ih, iw) = dims(arch.node(p).shape);
                let (oc, oh, ow) = dims(node.shape);
                let in_pg = c.in_channels / c.groups;
                let out_pg = c.out_channels / c.groups;
                let m = mask.layer(layer);
                for co in 0..oc {
                    let g = co / out_pg;
                    for cl in 0..in_pg {
                        let ci = g * in_pg + cl;
                        for ky in 0..c.kernel_h {
                            for kx in 0..c.kernel_w {
                                let flat = ((co * in_pg + cl) * c.kernel_h + ky) * c.kernel_w + kx;
                                if !m[flat] {
                                    continue;
                                }
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let y = (oy * c.stride + ky) as isize - c.padding as isize;
                                        let x = (ox * c.stride + kx) as isize - c.padding as isize;
                                        if y < 0 || x < 0 || y >= ih as isize || x >= iw as isize {
                                            continue;
                                        }
                                        edges.push(Edge {
                                            src: in0 + (ci * ih + y as usize) * iw + x as usize,
                                            dst: out0 + (co * oh + oy) * ow + ox,
                                            param: Some((layer, flat)),
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
                layer += 1;
            }
            NodeKind::Pool2d(pl) => {
                let p = node.inputs[0];
                let in0 = offset[p];
                let (ch, ih, iw) = dims(arch.node(p).shape);
                let (_, oh, ow) = dims(node.shape);
                for c in 0..ch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ky in 0..pl.window {
                                for kx in 0..pl.window {
                                    let y = (oy * pl.stride + ky) as isize - pl.padding as isize;
                                    let x = (ox * pl.stride + kx) as isize - pl.padding as isize;
                                    if y < 0 || x < 0 || y >= ih as isize || x >= iw as isize {
                                        continue;
                                    }
                                    edges.push(Edge {
                                        src: in0 + (c * ih + y as usize) * iw + x as usize,
                                        dst: out0 + (c * oh + oy) * ow + ox,
                                        param: None,
                                    });
                                }
                            }
                        }
                    }
                }
            }
            NodeKind::Flatten | NodeKind::Output | NodeKind::Add => {
                for &p in &node.inputs {
                    let in0 = offset[p];
                    for u in 0..node.shape.numel() {
                        edges.push(Edge {
                            src: in0 + u,
                            dst: out0 + u,
                            param: None,
                        });
                    }
                }
            }
        }
    }
    edges
}

fn bfs(n: usize, adj: &[Vec<usize>], sources: impl Iterator<Item = usize>) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for s in sources {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Effective-sparsity report computed by explicit graph search.
///
/// Refuses graphs with more than `max_units` activation units in total.
pub fn oracle_effective(
    arch: &ArchGraph,
    mask: &MaskSet,
    max_units: usize,
) -> Result<ConnectivityReport> {
    mask.check(arch)?;
    let units: usize = arch.unit_counts().iter().sum();
    if units > max_units {
        return Err(Error::OracleBound {
            units,
            bound: max_units,
        });
    }
    let edges = expand(arch, mask);
    let mut fwd_adj = vec![Vec::new(); units];
    let mut rev_adj = vec![Vec::new(); units];
    for e in &edges {
        fwd_adj[e.src].push(e.dst);
        rev_adj[e.dst].push(e.src);
    }

    let first_unit = |node: usize| {
        arch.nodes()[..node]
            .iter()
            .map(|n| n.shape.numel())
            .sum::<usize>()
    };
    let in0 = first_unit(arch.input_node());
    let out0 = first_unit(arch.output_node());
    let from_input = bfs(
        units,
        &fwd_adj,
        in0..in0 + arch.node(arch.input_node()).shape.numel(),
    );
    let to_output = bfs(
        units,
        &rev_adj,
        out0..out0 + arch.node(arch.output_node()).shape.numel(),
    );

    let mut active: Vec<Vec<bool>> = arch
        .param_counts()
        .iter()
        .map(|&n| vec![false; n])
        .collect();
    for e in &edges {
        if let Some((l, flat)) = e.param {
            if from_input[e.src] && to_output[e.dst] {
                active[l][flat] = true;
            }
        }
    }

    let layers = (0..arch.num_layers())
        .map(|l| {
            let params = arch.param_counts()[l] as u64;
            let kept = mask.layer(l).iter().filter(|&&b| b).count() as u64;
            let act = active[l].iter().filter(|&&b| b).count() as u64;
            LayerCounts {
                params,
                pruned: params - kept,
                inactive_unpruned: kept - act,
                active: act,
            }
        })
        .collect();
    Ok(ConnectivityReport::from_counts(arch, layers))
}
