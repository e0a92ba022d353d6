//! Layerwise sparsity quotas.
//!
//! An allocator maps a global target sparsity `s` to per-layer sparsities
//! `s_ℓ` with `Σ s_ℓ |Θ_ℓ| = s Σ |Θ_ℓ|`. A compliant allocator also never
//! fully prunes a layer while `s < 1` (layer integrity).

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::arch::{ArchGraph, NodeKind};
use crate::error::{Error, Result};
use crate::tensor::MaskSet;

/// Handling of layers whose proportional density would exceed 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampMode {
    /// Report the target as infeasible.
    Strict,
    /// Clamp offending layers to density 1 and re-solve over the rest.
    Redistribute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "name", content = "mode", rename_all = "kebab-case")]
pub enum Allocator {
    Uniform,
    UniformPlus,
    Erk(ClampMode),
    SmartRatios(ClampMode),
    Igq,
}

impl Allocator {
    pub fn quotas(&self, s: f64, arch: &ArchGraph) -> Result<QuotaVector> {
        match *self {
            Allocator::Uniform => uniform(s, arch.param_counts()),
            Allocator::UniformPlus => uniform_plus(s, arch),
            Allocator::Erk(mode) => erk(s, arch, mode),
            Allocator::SmartRatios(mode) => smart_ratios(s, arch, mode),
            Allocator::Igq => igq(s, arch.param_counts()),
        }
    }

    /// Allocators that keep `s_ℓ < 1` for every feasible `s < 1`.
    pub fn preserves_layers(&self) -> bool {
        true
    }

    pub fn label(&self) -> &'static str {
        match self {
            Allocator::Uniform => "uniform",
            Allocator::UniformPlus => "uniform-plus",
            Allocator::Erk(ClampMode::Strict) => "erk",
            Allocator::Erk(ClampMode::Redistribute) => "erk-redistribute",
            Allocator::SmartRatios(ClampMode::Strict) => "smart-ratios",
            Allocator::SmartRatios(ClampMode::Redistribute) => "smart-ratios-redistribute",
            Allocator::Igq => "igq",
        }
    }
}

impl fmt::Display for Allocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Allocator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "uniform" => Allocator::Uniform,
            "uniform-plus" | "uniform+" => Allocator::UniformPlus,
            "erk" | "erk-strict" => Allocator::Erk(ClampMode::Strict),
            "erk-redistribute" => Allocator::Erk(ClampMode::Redistribute),
            "smart-ratios" | "smart-ratios-strict" => Allocator::SmartRatios(ClampMode::Strict),
            "smart-ratios-redistribute" => Allocator::SmartRatios(ClampMode::Redistribute),
            "igq" => Allocator::Igq,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown allocator `{other}` (expected uniform, uniform-plus, erk, \
                     erk-redistribute, smart-ratios, smart-ratios-redistribute, igq)"
                )))
            }
        })
    }
}

/// How a quota vector was produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "allocator")]
pub enum Provenance {
    Uniform,
    UniformPlus {
        rate: f64,
    },
    Erk {
        mode: ClampMode,
        scale: f64,
        clamped: Vec<usize>,
    },
    SmartRatios {
        mode: ClampMode,
        scale: f64,
        clamped: Vec<usize>,
    },
    Igq {
        force: f64,
    },
    FromMask,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuotaVector {
    pub sparsities: Vec<f64>,
    pub target: f64,
    pub provenance: Provenance,
}

impl QuotaVector {
    pub fn compressions(&self) -> Vec<f64> {
        self.sparsities.iter().map(|s| 1.0 / (1.0 - s)).collect()
    }

    /// `Σ s_ℓ |Θ_ℓ|`.
    pub fn pruned_total(&self, sizes: &[usize]) -> f64 {
        self.sparsities
            .iter()
            .zip(sizes)
            .map(|(s, &n)| s * n as f64)
            .sum()
    }

    fn layer_integrity(&self) -> bool {
        !matches!(self.provenance, Provenance::FromMask)
    }
}

/// Integer number of pruned parameters per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrunedCounts {
    pub counts: Vec<usize>,
}

impl PrunedCounts {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn check_target(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) || s.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "target sparsity {s} outside [0, 1]"
        )));
    }
    Ok(())
}

pub fn uniform(s: f64, sizes: &[usize]) -> Result<QuotaVector> {
    check_target(s)?;
    Ok(QuotaVector {
        sparsities: vec![s; sizes.len()],
        target: s,
        provenance: Provenance::Uniform,
    })
}

/// Total pruned parameters under IGQ with force `f`.
fn igq_total(f: f64, sizes: &[usize]) -> f64 {
    sizes
        .iter()
        .map(|&n| {
            let n = n as f64;
            n * (1.0 - 1.0 / (f * n + 1.0))
        })
        .sum()
}

/// Smallest force whose IGQ total reaches `want`, to full `f64` resolution.
///
/// The total is strictly increasing in the force, so bisection is run until
/// the bracket collapses to adjacent floats.
pub fn igq_force(s: f64, sizes: &[usize]) -> f64 {
    let n: f64 = sizes.iter().map(|&n| n as f64).sum();
    let want = s * n;
    if s <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0 / n;
    while igq_total(hi, sizes) < want {
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    loop {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        if igq_total(mid, sizes) < want {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Ideal-gas quotas: layer compression `F|Θ_ℓ| + 1`, with `F` chosen to hit `s`.
pub fn igq(s: f64, sizes: &[usize]) -> Result<QuotaVector> {
    check_target(s)?;
    if s == 1.0 {
        return Ok(QuotaVector {
            sparsities: vec![1.0; sizes.len()],
            target: s,
            provenance: Provenance::Igq {
                force: f64::INFINITY,
            },
        });
    }
    let force = igq_force(s, sizes);
    Ok(QuotaVector {
        sparsities: igq_sparsities(force, sizes),
        target: s,
        provenance: Provenance::Igq { force },
    })
}

pub fn igq_sparsities(force: f64, sizes: &[usize]) -> Vec<f64> {
    sizes
        .iter()
        .map(|&n| 1.0 - 1.0 / (force * n as f64 + 1.0))
        .collect()
}

/// Uniform with the first conv layer kept dense and the last dense layer capped at 80%.
pub fn uniform_plus(s: f64, arch: &ArchGraph) -> Result<QuotaVector> {
    check_target(s)?;
    const CAP: f64 = 0.8;
    let infeasible = |reason: String| Error::Infeasible {
        allocator: "uniform-plus".into(),
        target: s,
        reason,
    };
    let first = arch
        .first_conv_layer()
        .ok_or_else(|| infeasible("architecture has no conv layer".into()))?;
    let last = arch
        .last_dense_layer()
        .ok_or_else(|| infeasible("architecture has no dense layer".into()))?;
    let sizes = arch.param_counts();
    let total: f64 = sizes.iter().map(|&n| n as f64).sum();
    let want = s * total;
    let n_last = sizes[last] as f64;
    let n_rest: f64 = (0..sizes.len())
        .filter(|&l| l != first && l != last)
        .map(|l| sizes[l] as f64)
        .sum();

    let (rate, last_rate) = if n_rest == 0.0 {
        (0.0, want / n_last)
    } else {
        let u = want / (n_last + n_rest);
        if u <= CAP {
            (u, u)
        } else {
            ((want - CAP * n_last) / n_rest, CAP)
        }
    };
    if rate > 1.0 || last_rate > CAP {
        return Err(infeasible(format!(
            "remaining layers would need sparsity {:.6}",
            rate.max(last_rate)
        )));
    }
    let sparsities = (0..sizes.len())
        .map(|l| {
            if l == first {
                0.0
            } else if l == last {
                last_rate
            } else {
                rate
            }
        })
        .collect();
    Ok(QuotaVector {
        sparsities,
        target: s,
        provenance: Provenance::UniformPlus { rate },
    })
}

/// ERK density factor of a prunable layer.
pub fn erk_factor(arch: &ArchGraph, layer: usize) -> f64 {
    match &arch.layer_node(layer).kind {
        NodeKind::Dense(d) => {
            let (i, o) = (d.in_units as f64, d.out_units as f64);
            (i + o) / (i * o)
        }
        NodeKind::Conv2d(c) => {
            let (h, w) = (c.kernel_h as f64, c.kernel_w as f64);
            let (i, o) = (c.in_per_group() as f64, c.out_channels as f64);
            (h + w + i + o) / (h * w * i * o)
        }
        _ => unreachable!(),
    }
}

/// Densities proportional to `factors`, scaled to the density budget `1 - s`.
///
/// Returns densities, the final scale and the clamped layers.
fn proportional_density(
    allocator: &str,
    s: f64,
    sizes: &[usize],
    factors: &[f64],
    mode: ClampMode,
) -> Result<(Vec<f64>, f64, Vec<usize>)> {
    const TOL: f64 = 1e-12;
    let total: f64 = sizes.iter().map(|&n| n as f64).sum();
    let budget = (1.0 - s) * total;
    let mut clamped = vec![false; sizes.len()];
    loop {
        let fixed: f64 = (0..sizes.len())
            .filter(|&l| clamped[l])
            .map(|l| sizes[l] as f64)
            .sum();
        let weight: f64 = (0..sizes.len())
            .filter(|&l| !clamped[l])
            .map(|l| factors[l] * sizes[l] as f64)
            .sum();
        let scale = if weight > 0.0 {
            (budget - fixed) / weight
        } else {
            0.0
        };
        let density: Vec<f64> = (0..sizes.len())
            .map(|l| if clamped[l] { 1.0 } else { scale * factors[l] })
            .collect();
        let over: Vec<usize> = (0..sizes.len())
            .filter(|&l| !clamped[l] && density[l] > 1.0 + TOL)
            .collect();
        if over.is_empty() {
            let clamped_layers = (0..sizes.len()).filter(|&l| clamped[l]).collect();
            let density = density.into_iter().map(|d| d.clamp(0.0, 1.0)).collect();
            return Ok((density, scale, clamped_layers));
        }
        match mode {
            ClampMode::Strict => {
                let list: Vec<String> = over
                    .iter()
                    .map(|&l| format!("{l} ({:.4})", density[l]))
                    .collect();
                return Err(Error::Infeasible {
                    allocator: allocator.into(),
                    target: s,
                    reason: format!("layer densities exceed 1: {}", list.join(", ")),
                });
            }
            ClampMode::Redistribute => {
                for l in over {
                    clamped[l] = true;
                }
            }
        }
    }
}

pub fn erk(s: f64, arch: &ArchGraph, mode: ClampMode) -> Result<QuotaVector> {
    check_target(s)?;
    let factors: Vec<f64> = (0..arch.num_layers())
        .map(|l| erk_factor(arch, l))
        .collect();
    let (density, scale, clamped) =
        proportional_density("erk", s, arch.param_counts(), &factors, mode)?;
    Ok(QuotaVector {
        sparsities: density.iter().map(|d| 1.0 - d).collect(),
        target: s,
        provenance: Provenance::Erk {
            mode,
            scale,
            clamped,
        },
    })
}

/// Smart-Ratios density factor `(L - l + 1)^2 + (L - l + 1)` for 1-based `l`.
pub fn smart_ratio_factor(num_layers: usize, layer: usize) -> f64 {
    let r = (num_layers - layer) as f64;
    r * r + r
}

pub fn smart_ratios(s: f64, arch: &ArchGraph, mode: ClampMode) -> Result<QuotaVector> {
    check_target(s)?;
    if arch.has_add() {
        return Err(Error::InvalidArgument(format!(
            "smart-ratios needs a chain architecture; `{}` has residual adds",
            arch.name()
        )));
    }
    let l = arch.num_layers();
    if s == 0.0 {
        return Ok(QuotaVector {
            sparsities: vec![0.0; l],
            target: s,
            provenance: Provenance::SmartRatios {
                mode,
                scale: 0.0,
                clamped: Vec::new(),
            },
        });
    }
    let factors: Vec<f64> = (0..l).map(|i| smart_ratio_factor(l, i)).collect();
    let (density, scale, clamped) =
        proportional_density("smart-ratios", s, arch.param_counts(), &factors, mode)?;
    Ok(QuotaVector {
        sparsities: density.iter().map(|d| 1.0 - d).collect(),
        target: s,
        provenance: Provenance::SmartRatios {
            mode,
            scale,
            clamped,
        },
    })
}

pub fn quotas_from_mask(mask: &MaskSet) -> QuotaVector {
    let pruned = mask.pruned_counts();
    let sizes: Vec<usize> = mask.layers().iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    QuotaVector {
        sparsities: pruned
            .iter()
            .zip(&sizes)
            .map(|(&p, &n)| p as f64 / n as f64)
            .collect(),
        target: pruned.iter().sum::<usize>() as f64 / total as f64,
        provenance: Provenance::FromMask,
    }
}

/// `round(s · N)` with halves rounded away from zero.
pub fn global_pruned_target(s: f64, total: usize) -> usize {
    (s * total as f64).round() as usize
}

/// Integer pruned counts per layer.
///
/// The global count is `round(s · N)`. Layers get `floor(s_ℓ |Θ_ℓ|)` and the
/// remainder is handed out by largest fractional part, lower layer index
/// first on ties. Counts never exceed `|Θ_ℓ|`, and never reach it while
/// `s < 1` for allocators with layer integrity.
pub fn integerize(q: &QuotaVector, sizes: &[usize]) -> PrunedCounts {
    let total: usize = sizes.iter().sum();
    let target = global_pruned_target(q.target, total);
    let cap: Vec<usize> = sizes
        .iter()
        .map(|&n| {
            if q.layer_integrity() && target < total && n > 0 {
                n - 1
            } else {
                n
            }
        })
        .collect();
    let exact: Vec<f64> = q
        .sparsities
        .iter()
        .zip(sizes)
        .map(|(s, &n)| s * n as f64)
        .collect();
    let mut counts: Vec<usize> = exact
        .iter()
        .zip(&cap)
        .map(|(&e, &c)| (e.floor().max(0.0) as usize).min(c))
        .collect();
    let frac: Vec<f64> = exact
        .iter()
        .zip(&counts)
        .map(|(&e, &k)| e - k as f64)
        .collect();

    let assigned: usize = counts.iter().sum();
    if assigned < target {
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
        let mut need = target - assigned;
        while need > 0 {
            let before = need;
            for &l in &order {
                if need == 0 {
                    break;
                }
                if counts[l] < cap[l] {
                    counts[l] += 1;
                    need -= 1;
                }
            }
            if need == before {
                break;
            }
        }
    } else if assigned > target {
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        order.sort_by(|&a, &b| frac[a].total_cmp(&frac[b]).then(b.cmp(&a)));
        let mut extra = assigned - target;
        while extra > 0 {
            let before = extra;
            for &l in &order {
                if extra == 0 {
                    break;
                }
                if counts[l] > 0 {
                    counts[l] -= 1;
                    extra -= 1;
                }
            }
            if extra == before {
                break;
            }
        }
    }
    PrunedCounts { counts }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub target: f64,
    /// Allocator error (infeasible target), if any.
    pub error: Option<String>,
    pub total_ok: bool,
    pub integrity_ok: bool,
    pub quotas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplianceReport {
    pub allocator: String,
    pub arch: String,
    pub points: Vec<GridPoint>,
    /// `(layer, lower target, higher target)` where the layer's quota decreased.
    pub monotonicity_violations: Vec<(usize, f64, f64)>,
}

impl ComplianceReport {
    pub fn compliant(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.error.is_none() && p.total_ok && p.integrity_ok)
    }

    pub fn layerwise_monotone(&self) -> bool {
        self.monotonicity_violations.is_empty()
    }

    /// Grid targets at which the allocator failed or broke a constraint.
    pub fn violating_targets(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.error.is_some() || !p.total_ok || !p.integrity_ok)
            .map(|p| p.target)
            .collect()
    }
}

/// Evaluate an allocator over a sparsity grid: total sparsity (±1 parameter
/// after integerization), layer integrity, and layerwise monotonicity.
pub fn check_lsq(allocator: Allocator, arch: &ArchGraph, grid: &[f64]) -> ComplianceReport {
    const MONO_TOL: f64 = 1e-12;
    let sizes = arch.param_counts();
    let total: usize = sizes.iter().sum();
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let points: Vec<GridPoint> = sorted
        .iter()
        .map(|&s| match allocator.quotas(s, arch) {
            Err(e) => GridPoint {
                target: s,
                error: Some(e.to_string()),
                total_ok: false,
                integrity_ok: false,
                quotas: None,
            },
            Ok(q) => {
                let counts = integerize(&q, sizes);
                let want = s * total as f64;
                let float_ok = (q.pruned_total(sizes) - want).abs() <= 1.0;
                let int_ok = (counts.total() as f64 - want).abs() <= 1.0;
                let integrity_ok = s >= 1.0
                    || (q.sparsities.iter().all(|&x| x < 1.0)
                        && counts.counts.iter().zip(sizes).all(|(&k, &n)| k < n));
                GridPoint {
                    target: s,
                    error: None,
                    total_ok: float_ok && int_ok,
                    integrity_ok,
                    quotas: Some(q.sparsities),
                }
            }
        })
        .collect();

    let mut monotonicity_violations = Vec::new();
    let ok: Vec<&GridPoint> = points.iter().filter(|p| p.quotas.is_some()).collect();
    for pair in ok.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (qa, qb) = (a.quotas.as_ref().unwrap(), b.quotas.as_ref().unwrap());
        for l in 0..qa.len() {
            if qa[l] > qb[l] + MONO_TOL {
                monotonicity_violations.push((l, a.target, b.target));
            }
        }
    }
    ComplianceReport {
        allocator: allocator.label().to_string(),
        arch: arch.name().to_string(),
        points,
        monotonicity_violations,
    }
}

/// `{0.00, 0.01, …, 0.99}` plus `0.999`.
pub fn standard_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
    g.push(0.999);
    g
}
