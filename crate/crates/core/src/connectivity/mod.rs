//! Effective sparsity by unit-level reachability.
//!
//! A parameter is active iff it is unpruned and lies on some input-to-output
//! path of the masked network. Reachability is computed on booleans with a
//! forward sweep (reachable from the input) and a reverse sweep (reaches the
//! output); a parameter is active when at least one of its application sites
//! connects a forward-reachable source unit to a backward-reachable
//! destination unit.

mod geometry;
pub mod oracle;
pub mod synflow;

use serde::Serialize;

use crate::arch::{ArchGraph, NodeKind};
use crate::error::Result;
use crate::tensor::{MaskSet, SparsityCount};

pub(crate) use geometry::{ConvGeom, PoolGeom};
pub use oracle::{oracle_effective, DEFAULT_ORACLE_UNITS};
pub use synflow::{synflow_log_scores, synflow_scores, LogScores};

/// Per-node reachability flags over each node's output units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachState {
    /// `fwd[node][u]`: unit reachable from some input unit.
    pub fwd: Vec<Vec<bool>>,
    /// `bwd[node][u]`: some output unit reachable from the unit.
    pub bwd: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerCounts {
    pub params: u64,
    pub pruned: u64,
    pub inactive_unpruned: u64,
    pub active: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectivityReport {
    pub layer_ids: Vec<String>,
    pub layers: Vec<LayerCounts>,
    pub total: LayerCounts,
    pub direct_sparsity: f64,
    pub effective_sparsity: f64,
    pub direct_compression: f64,
    pub effective_compression: f64,
}

impl ConnectivityReport {
    pub(crate) fn from_counts(arch: &ArchGraph, layers: Vec<LayerCounts>) -> Self {
        let mut total = LayerCounts {
            params: 0,
            pruned: 0,
            inactive_unpruned: 0,
            active: 0,
        };
        for c in &layers {
            total.params += c.params;
            total.pruned += c.pruned;
            total.inactive_unpruned += c.inactive_unpruned;
            total.active += c.active;
        }
        let direct = SparsityCount {
            pruned: total.pruned,
            total: total.params,
        };
        let effective = SparsityCount {
            pruned: total.params - total.active,
            total: total.params,
        };
        ConnectivityReport {
            layer_ids: arch.layer_ids().into_iter().map(String::from).collect(),
            layers,
            total,
            direct_sparsity: direct.sparsity(),
            effective_sparsity: effective.sparsity(),
            direct_compression: direct.compression(),
            effective_compression: effective.compression(),
        }
    }

    /// No parameter connects input to output.
    pub fn disconnected(&self) -> bool {
        self.total.active == 0
    }

    /// Integer counts only; used to compare reports from different routes.
    pub fn counts(&self) -> (&[LayerCounts], LayerCounts) {
        (&self.layers, self.total)
    }
}

pub fn reachability(arch: &ArchGraph, mask: &MaskSet) -> Result<ReachState> {
    mask.check(arch)?;
    let layer_of = layer_lookup(arch);
    let n = arch.nodes().len();
    let units = arch.unit_counts();

    let mut fwd: Vec<Vec<bool>> = Vec::with_capacity(n);
    for (i, node) in arch.nodes().iter().enumerate() {
        let out = match &node.kind {
            NodeKind::Input(_) => vec![true; units[i]],
            NodeKind::Dense(d) => {
                let m = mask.layer(layer_of[i].unwrap());
                let input = &fwd[node.inputs[0]];
                (0..d.out_units)
                    .map(|o| {
                        let row = &m[o * d.in_units..(o + 1) * d.in_units];
                        row.iter().zip(input).any(|(&w, &x)| w && x)
                    })
                    .collect()
            }
            NodeKind::Conv2d(c) => {
                let g = ConvGeom::new(c, arch.node(node.inputs[0]).shape, node.shape);
                let m = mask.layer(layer_of[i].unwrap());
                let mut out = vec![false; units[i]];
                g.for_each_kernel_entry(m, |co, ci, ky, kx| {
                    g.forward_or(&fwd[node.inputs[0]], &mut out, co, ci, ky, kx);
                });
                out
            }
            NodeKind::Pool2d(p) => {
                let g = PoolGeom::new(p, arch.node(node.inputs[0]).shape, node.shape);
                g.gather_or(&fwd[node.inputs[0]])
            }
            NodeKind::Flatten | NodeKind::Output => fwd[node.inputs[0]].clone(),
            NodeKind::Add => {
                let mut out = vec![false; units[i]];
                for &p in &node.inputs {
                    or_into(&mut out, &fwd[p]);
                }
                out
            }
        };
        fwd.push(out);
    }

    let mut bwd: Vec<Vec<bool>> = units.iter().map(|&u| vec![false; u]).collect();
    bwd[arch.output_node()].iter_mut().for_each(|b| *b = true);
    for i in (0..n).rev() {
        let node = arch.node(i);
        if node.inputs.is_empty() {
            continue;
        }
        let here = std::mem::take(&mut bwd[i]);
        match &node.kind {
            NodeKind::Input(_) => {}
            NodeKind::Dense(d) => {
                let m = mask.layer(layer_of[i].unwrap());
                let dst = &mut bwd[node.inputs[0]];
                for (o, _) in here.iter().enumerate().filter(|(_, &b)| b) {
                    let row = &m[o * d.in_units..(o + 1) * d.in_units];
                    for (slot, &w) in dst.iter_mut().zip(row) {
                        *slot |= w;
                    }
                }
            }
            NodeKind::Conv2d(c) => {
                let g = ConvGeom::new(c, arch.node(node.inputs[0]).shape, node.shape);
                let m = mask.layer(layer_of[i].unwrap());
                let dst = &mut bwd[node.inputs[0]];
                g.for_each_kernel_entry(m, |co, ci, ky, kx| {
                    g.backward_or(&here, dst, co, ci, ky, kx);
                });
            }
            NodeKind::Pool2d(p) => {
                let g = PoolGeom::new(p, arch.node(node.inputs[0]).shape, node.shape);
                g.scatter_or(&here, &mut bwd[node.inputs[0]]);
            }
            NodeKind::Flatten | NodeKind::Output | NodeKind::Add => {
                for &p in &node.inputs {
                    or_into(&mut bwd[p], &here);
                }
            }
        }
        bwd[i] = here;
    }

    Ok(ReachState { fwd, bwd })
}

fn or_into(dst: &mut [bool], src: &[bool]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d |= s;
    }
}

/// Node index -> prunable layer index.
pub(crate) fn layer_lookup(arch: &ArchGraph) -> Vec<Option<usize>> {
    let mut v = vec![None; arch.nodes().len()];
    for (l, &node) in arch.prunable().iter().enumerate() {
        v[node] = Some(l);
    }
    v
}

/// Mask of active parameters: unpruned and on some input-to-output path.
pub fn active_mask(arch: &ArchGraph, mask: &MaskSet) -> Result<MaskSet> {
    let reach = reachability(arch, mask)?;
    Ok(active_from_reach(arch, mask, &reach))
}

fn active_from_reach(arch: &ArchGraph, mask: &MaskSet, reach: &ReachState) -> MaskSet {
    let layers = arch
        .prunable()
        .iter()
        .enumerate()
        .map(|(l, &i)| {
            let node = arch.node(i);
            let src = &reach.fwd[node.inputs[0]];
            let dst = &reach.bwd[i];
            let m = mask.layer(l);
            match &node.kind {
                NodeKind::Dense(d) => {
                    let mut act = vec![false; m.len()];
                    for (o, _) in dst.iter().enumerate().filter(|(_, &b)| b) {
                        let base = o * d.in_units;
                        for (j, &x) in src.iter().enumerate() {
                            act[base + j] = x && m[base + j];
                        }
                    }
                    act
                }
                NodeKind::Conv2d(c) => {
                    let g = ConvGeom::new(c, arch.node(node.inputs[0]).shape, node.shape);
                    let mut act = vec![false; m.len()];
                    g.for_each_kernel_entry(m, |co, ci, ky, kx| {
                        if g.any_site(src, dst, co, ci, ky, kx) {
                            act[g.flat_index(co, ci, ky, kx)] = true;
                        }
                    });
                    act
                }
                _ => unreachable!(),
            }
        })
        .collect();
    MaskSet::new(layers)
}

pub fn effective_report(arch: &ArchGraph, mask: &MaskSet) -> Result<ConnectivityReport> {
    let reach = reachability(arch, mask)?;
    let active = active_from_reach(arch, mask, &reach);
    Ok(report_from_masks(arch, mask, &active))
}

pub(crate) fn report_from_masks(
    arch: &ArchGraph,
    mask: &MaskSet,
    active: &MaskSet,
) -> ConnectivityReport {
    let layers = (0..arch.num_layers())
        .map(|l| {
            let params = mask.layer(l).len() as u64;
            let kept = mask.layer(l).iter().filter(|&&b| b).count() as u64;
            let act = active.layer(l).iter().filter(|&&b| b).count() as u64;
            LayerCounts {
                params,
                pruned: params - kept,
                inactive_unpruned: kept - act,
                active: act,
            }
        })
        .collect();
    ConnectivityReport::from_counts(arch, layers)
}

/// Prune every inactive parameter; the result has equal direct and effective sparsity.
pub fn prune_inactive(arch: &ArchGraph, mask: &MaskSet) -> Result<MaskSet> {
    active_mask(arch, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::zoo::builtin_arch;
    use crate::error::Error;

    pub(crate) fn mlp222() -> ArchGraph {
        ArchGraph::parse(
            r#"{"name":"mlp222","nodes":[
            {"id":"x","kind":"input","units":2},
            {"id":"l1","kind":"dense","inputs":["x"],"in_units":2,"out_units":2},
            {"id":"l2","kind":"dense","inputs":["l1"],"in_units":2,"out_units":2},
            {"id":"y","kind":"output","inputs":["l2"]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn full_mask_everything_reachable() {
        for name in ["lenet300100", "lenet5"] {
            let g = builtin_arch(name).unwrap();
            let r = reachability(&g, &MaskSet::ones(&g)).unwrap();
            assert!(r.fwd.iter().flatten().all(|&b| b));
            assert!(r.bwd.iter().flatten().all(|&b| b));
            let rep = effective_report(&g, &MaskSet::ones(&g)).unwrap();
            assert_eq!(rep.effective_sparsity, 0.0);
        }
    }

    #[test]
    fn hidden_unit_cut_off() {
        let g = mlp222();
        // prune both incoming edges of hidden unit 1 (row 1 of l1)
        let mask = MaskSet::new(vec![vec![true, true, false, false], vec![true; 4]]);
        let r = reachability(&g, &mask).unwrap();
        assert_eq!(r.fwd[1], vec![true, false]);
        let rep = effective_report(&g, &mask).unwrap();
        assert_eq!(rep.total.pruned, 2);
        assert_eq!(rep.total.active, 4);
        assert_eq!(rep.direct_sparsity, 2.0 / 8.0);
        assert_eq!(rep.effective_sparsity, 4.0 / 8.0);
        assert_eq!(rep.layers[1].inactive_unpruned, 2);
    }

    #[test]
    fn size_mismatch_is_error() {
        let g = mlp222();
        let mask = MaskSet::new(vec![vec![true; 4]]);
        assert!(matches!(
            effective_report(&g, &mask),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn empty_mask_fully_effective() {
        let g = mlp222();
        let rep = effective_report(&g, &MaskSet::zeros(&g)).unwrap();
        assert_eq!(rep.effective_sparsity, 1.0);
        assert!(rep.disconnected());
    }
}
