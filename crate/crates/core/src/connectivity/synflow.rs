//! SynFlow path-norm scores.
//!
//! The network is linearized (absolute masked weights, no biases, norms or
//! activations, pooling as window sums, adds as sums) and evaluated on the
//! all-ones input. With `R` the sum of outputs, the score of parameter `θ`
//! is `|∂R/∂θ · θ|`, the ℓ1 path norm through that parameter.
//!
//! Path products overflow `f64` on deep networks, so both passes run in the
//! log domain. A score is exactly zero (`-inf` in log space) iff no term
//! reaches it, which keeps zero detection exact.

use crate::arch::{ArchGraph, NodeKind};
use crate::error::{Error, Result};
use crate::tensor::{MaskSet, ScoreSet, WeightSet};

use super::{layer_lookup, ConvGeom, PoolGeom};

/// Natural-log scores per layer; `-inf` marks a zero score.
#[derive(Debug, Clone, PartialEq)]
pub struct LogScores {
    pub layers: Vec<Vec<f64>>,
}

impl LogScores {
    /// Shift each layer so its largest score is 1 and exponentiate.
    ///
    /// Ratios inside a layer are preserved; ratios across layers are not.
    pub fn to_layer_scaled(&self) -> ScoreSet {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    vec![0.0; l.len()]
                } else {
                    l.iter().map(|&v| (v - max).exp()).collect()
                }
            })
            .collect();
        ScoreSet::new(layers).expect("scaled scores lie in [0, 1]")
    }

    pub fn is_positive(&self, layer: usize, idx: usize) -> bool {
        self.layers[layer][idx] > f64::NEG_INFINITY
    }
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
struct LogAcc {
    max: f64,
    sum: f64,
}

impl LogAcc {
    const EMPTY: LogAcc = LogAcc {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    #[inline]
    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

fn finish(accs: &[LogAcc]) -> Vec<f64> {
    accs.iter().map(LogAcc::value).collect()
}

fn log_abs_weights(weights: &WeightSet, mask: &MaskSet) -> Vec<Vec<f64>> {
    weights
        .layers()
        .iter()
        .zip(mask.layers())
        .map(|(w, m)| {
            w.iter()
                .zip(m)
                .map(|(&x, &keep)| {
                    if keep {
                        x.abs().ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect()
}

/// Log-domain SynFlow scores, suitable for global ranking.
pub fn synflow_log_scores(
    arch: &ArchGraph,
    weights: &WeightSet,
    mask: &MaskSet,
) -> Result<LogScores> {
    weights.check(arch)?;
    mask.check(arch)?;
    let lw = log_abs_weights(weights, mask);
    let layer_of = layer_lookup(arch);
    let n = arch.nodes().len();
    let units = arch.unit_counts();

    // forward: log activations of the linearized network on the all-ones input
    let mut la: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, node) in arch.nodes().iter().enumerate() {
        let out = match &node.kind {
            NodeKind::Input(_) => vec![0.0; units[i]],
            NodeKind::Dense(d) => {
                let w = &lw[layer_of[i].unwrap()];
                let x = &la[node.inputs[0]];
                (0..d.out_units)
                    .map(|o| {
                        let mut acc = LogAcc::EMPTY;
                        for (wv, xv) in w[o * d.in_units..(o + 1) * d.in_units].iter().zip(x) {
                            acc.add(wv + xv);
                        }
                        acc.value()
                    })
                    .collect()
            }
            NodeKind::Conv2d(c) => {
                let g = ConvGeom::new(c, arch.node(node.inputs[0]).shape, node.shape);
                let w = &lw[layer_of[i].unwrap()];
                let x = &la[node.inputs[0]];
                let mut acc = vec![LogAcc::EMPTY; units[i]];
                g.for_each_entry(|idx, co, ci, ky, kx| {
                    let wv = w[idx];
                    if wv == f64::NEG_INFINITY {
                        return;
                    }
                    g.for_each_site(co, ci, ky, kx, |o, j| acc[o].add(wv + x[j]));
                });
                finish(&acc)
            }
            NodeKind::Pool2d(p) => {
                let g = PoolGeom::new(p, arch.node(node.inputs[0]).shape, node.shape);
                let x = &la[node.inputs[0]];
                let mut acc = vec![LogAcc::EMPTY; units[i]];
                g.for_each_pair(|o, j| acc[o].add(x[j]));
                finish(&acc)
            }
            NodeKind::Flatten | NodeKind::Output => la[node.inputs[0]].clone(),
            NodeKind::Add => {
                let mut acc = vec![LogAcc::EMPTY; units[i]];
                for &p in &node.inputs {
                    for (a, &v) in acc.iter_mut().zip(&la[p]) {
                        a.add(v);
                    }
                }
                finish(&acc)
            }
        };
        la.push(out);
    }

    // backward: log of dR/da for every unit
    let mut gacc: Vec<Vec<LogAcc>> = units.iter().map(|&u| vec![LogAcc::EMPTY; u]).collect();
    let mut lg: Vec<Vec<f64>> = vec![Vec::new(); n];
    for a in gacc[arch.output_node()].iter_mut() {
        a.add(0.0);
    }
    for i in (0..n).rev() {
        let node = arch.node(i);
        let g_here = finish(&gacc[i]);
        match &node.kind {
            NodeKind::Input(_) => {}
            NodeKind::Dense(d) => {
                let w = &lw[layer_of[i].unwrap()];
                let dst = &mut gacc[node.inputs[0]];
                for (o, &go) in g_here.iter().enumerate() {
                    if go == f64::NEG_INFINITY {
                        continue;
                    }
                    for (a, wv) in dst.iter_mut().zip(&w[o * d.in_units..(o + 1) * d.in_units]) {
                        a.add(wv + go);
                    }
                }
            }
            NodeKind::Conv2d(c) => {
                let g = ConvGeom::new(c, arch.node(node.inputs[0]).shape, node.shape);
                let w = &lw[layer_of[i].unwrap()];
                let dst = &mut gacc[node.inputs[0]];
                g.for_each_entry(|idx, co, ci, ky, kx| {
                    let wv = w[idx];
                    if wv == f64::NEG_INFINITY {
                        return;
                    }
                    g.for_each_site(co, ci, ky, kx, |o, j| dst[j].add(wv + g_here[o]));
                });
            }
            NodeKind::Pool2d(p) => {
                let g = PoolGeom::new(p, arch.node(node.inputs[0]).shape, node.shape);
                let dst = &mut gacc[node.inputs[0]];
                g.for_each_pair(|o, j| dst[j].add(g_here[o]));
            }
            NodeKind::Flatten | NodeKind::Output | NodeKind::Add => {
                for &p in &node.inputs {
                    for (a, &v) in gacc[p].iter_mut().zip(&g_here) {
                        a.add(v);
                    }
                }
            }
        }
        lg[i] = g_here;
    }

    let layers: Vec<Vec<f64>> = arch
        .prunable()
        .iter()
        .enumerate()
        .map(|(l, &i)| {
            let node = arch.node(i);
            let x = &la[node.inputs[0]];
            let go = &lg[i];
            let w = &lw[l];
            match &node.kind {
                NodeKind::Dense(d) => (0..w.len())
                    .map(|idx| {
                        let (o, j) = (idx / d.in_units, idx % d.in_units);
                        if w[idx] == f64::NEG_INFINITY
                            || x[j] == f64::NEG_INFINITY
                            || go[o] == f64::NEG_INFINITY
                        {
                            f64::NEG_INFINITY
                        } else {
                            w[idx] + x[j] + go[o]
                        }
                    })
                    .collect(),
                NodeKind::Conv2d(c) => {
                    let g = ConvGeom::new(c, arch.node(node.inputs[0]).shape, node.shape);
                    let mut out = vec![f64::NEG_INFINITY; w.len()];
                    g.for_each_entry(|idx, co, ci, ky, kx| {
                        if w[idx] == f64::NEG_INFINITY {
                            return;
                        }
                        let mut acc = LogAcc::EMPTY;
                        g.for_each_site(co, ci, ky, kx, |o, j| acc.add(x[j] + go[o]));
                        let v = acc.value();
                        if v > f64::NEG_INFINITY {
                            out[idx] = w[idx] + v;
                        }
                    });
                    out
                }
                _ => unreachable!(),
            }
        })
        .collect();

    for (l, layer) in layers.iter().enumerate() {
        if layer.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numeric(format!(
                "non-finite synflow score in layer `{}`",
                arch.layer_id(l)
            )));
        }
    }
    Ok(LogScores { layers })
}

/// SynFlow scores with each layer rescaled so its maximum is 1.
///
/// Rankings inside a layer are exact; use [`synflow_log_scores`] to rank
/// across layers.
pub fn synflow_scores(arch: &ArchGraph, weights: &WeightSet, mask: &MaskSet) -> Result<ScoreSet> {
    Ok(synflow_log_scores(arch, weights, mask)?.to_layer_scaled())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::zoo::builtin_arch;
    use crate::tensor::init_weights;

    #[test]
    fn logacc_matches_direct_sum() {
        let vals = [0.5f64, 2.0, 0.0, 3.5];
        let mut acc = LogAcc::EMPTY;
        for v in vals {
            acc.add(v.ln());
        }
        let want: f64 = vals.iter().sum::<f64>().ln();
        assert!((acc.value() - want).abs() < 1e-12);
        assert_eq!(LogAcc::EMPTY.value(), f64::NEG_INFINITY);
    }

    #[test]
    fn single_path_chain() {
        let g = ArchGraph::parse(
            r#"{"name":"chain","nodes":[
            {"id":"x","kind":"input","units":1},
            {"id":"h","kind":"dense","inputs":["x"],"in_units":1,"out_units":1},
            {"id":"o","kind":"dense","inputs":["h"],"in_units":1,"out_units":1},
            {"id":"y","kind":"output","inputs":["o"]}]}"#,
        )
        .unwrap();
        let (a, b) = (-0.7, 3.0);
        let w = WeightSet::new(vec![vec![a], vec![b]]);
        let s = synflow_log_scores(&g, &w, &MaskSet::ones(&g)).unwrap();
        let want = (a * b).abs();
        assert!((s.layers[0][0].exp() - want).abs() < 1e-12);
        assert!((s.layers[1][0].exp() - want).abs() < 1e-12);
    }

    #[test]
    fn dense_matches_linear_domain() {
        // 2-3-2 network, compare against explicit path enumeration
        let g = ArchGraph::parse(
            r#"{"name":"m","nodes":[
            {"id":"x","kind":"input","units":2},
            {"id":"a","kind":"dense","inputs":["x"],"in_units":2,"out_units":3},
            {"id":"b","kind":"dense","inputs":["a"],"in_units":3,"out_units":2},
            {"id":"y","kind":"output","inputs":["b"]}]}"#,
        )
        .unwrap();
        let w1 = vec![0.5, -1.0, 2.0, 0.25, -3.0, 1.5];
        let w2 = vec![1.0, 0.5, -2.0, -0.75, 1.25, 0.1];
        let w = WeightSet::new(vec![w1.clone(), w2.clone()]);
        let s = synflow_log_scores(&g, &w, &MaskSet::ones(&g)).unwrap();
        for h in 0..3 {
            for i in 0..2 {
                let path: f64 =
                    (0..2).map(|o| w2[o * 3 + h].abs()).sum::<f64>() * w1[h * 2 + i].abs();
                assert!((s.layers[0][h * 2 + i].exp() - path).abs() < 1e-12);
            }
        }
        for o in 0..2 {
            for h in 0..3 {
                let path: f64 =
                    (0..2).map(|i| w1[h * 2 + i].abs()).sum::<f64>() * w2[o * 3 + h].abs();
                assert!((s.layers[1][o * 3 + h].exp() - path).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_mask_scores_positive_on_deep_net() {
        let g = builtin_arch("vgg16").unwrap();
        let w = init_weights(&g, 0);
        let s = synflow_log_scores(&g, &w, &MaskSet::ones(&g)).unwrap();
        assert!(s.layers.iter().flatten().all(|v| v.is_finite()));
        let scaled = s.to_layer_scaled();
        assert!(scaled.layers().iter().all(|l| l.contains(&1.0)));
    }
}
