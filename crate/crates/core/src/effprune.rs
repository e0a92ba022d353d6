//! Pruning to a target *effective* sparsity.
//!
//! Both searches rely on embedding: if the unpruned set of one mask contains
//! another's, the smaller mask has effective sparsity at least as large.
//! Effective sparsity is therefore monotone along nested masks and a binary
//! search over the pruned count branches correctly.

use rand::seq::index;
use serde::Serialize;

use crate::arch::ArchGraph;
use crate::connectivity::{effective_report, report_from_masks, ConnectivityReport};
use crate::error::{Error, Result};
use crate::lsq::{self, Allocator, PrunedCounts};
use crate::pruners::top_k;
use crate::rng::{self, Purpose};
use crate::tensor::MaskSet;

fn check_target(target: f64) -> Result<()> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "target effective sparsity {target} outside [0, 1)"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdStep {
    pub keep: usize,
    pub effective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdResult {
    #[serde(skip)]
    pub mask: MaskSet,
    #[serde(skip)]
    pub report: ConnectivityReport,
    pub target: f64,
    pub keep: usize,
    /// Number of connectivity reports computed by the search.
    pub evaluations: usize,
    /// Only a disconnected mask reaches the target; `mask` is the sparsest
    /// connected one instead.
    pub unreachable: bool,
    pub trace: Vec<ThresholdStep>,
}

/// Densest global-threshold mask whose effective sparsity reaches `target`.
///
/// `keys` are ranking keys (linear or log scores); masks are
/// `top_k(keys, keep)` for varying `keep`. The search evaluates the full
/// mask first and then bisects, so it computes at most `⌈log₂ N⌉ + 1`
/// reports.
pub fn effective_threshold_prune(
    arch: &ArchGraph,
    keys: &[Vec<f64>],
    target: f64,
) -> Result<ThresholdResult> {
    check_target(target)?;
    let total = arch.total_params();
    if keys.len() != arch.num_layers()
        || keys
            .iter()
            .zip(arch.param_counts())
            .any(|(k, &n)| k.len() != n)
    {
        return Err(Error::shape(
            arch.name(),
            "score layout does not match the architecture",
        ));
    }

    let mut trace = Vec::new();
    let mut eval = |keep: usize| -> Result<(MaskSet, ConnectivityReport)> {
        let mask = top_k(keys, None, keep);
        let report = effective_report(arch, &mask)?;
        trace.push(ThresholdStep {
            keep,
            effective: report.effective_sparsity,
        });
        Ok((mask, report))
    };

    let full = eval(total)?;
    if full.1.effective_sparsity >= target {
        return Ok(ThresholdResult {
            mask: full.0,
            report: full.1,
            target,
            keep: total,
            evaluations: trace.len(),
            unreachable: false,
            trace,
        });
    }

    // eff(lo) >= target > eff(hi); eff(0) = 1 needs no evaluation
    let (mut lo, mut hi) = (0usize, total);
    let mut lo_state: Option<(MaskSet, ConnectivityReport)> = None;
    let mut hi_state = full;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let state = eval(mid)?;
        if state.1.effective_sparsity >= target {
            lo = mid;
            lo_state = Some(state);
        } else {
            hi = mid;
            hi_state = state;
        }
    }
    let evaluations = trace.len();
    let (lo_mask, lo_report) = lo_state.unwrap_or_else(|| {
        let empty = MaskSet::zeros(arch);
        let report = report_from_masks(arch, &empty, &empty);
        (empty, report)
    });

    if lo_report.disconnected() {
        Ok(ThresholdResult {
            mask: hi_state.0,
            report: hi_state.1,
            target,
            keep: hi,
            evaluations,
            unreachable: true,
            trace,
        })
    } else {
        Ok(ThresholdResult {
            mask: lo_mask,
            report: lo_report,
            target,
            keep: lo,
            evaluations,
            unreachable: false,
            trace,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Candidate stayed below target: it becomes the dense bound.
    Dense,
    /// Candidate reached target: its new prunings are protected.
    Sparse,
    /// Some layer has too few prunable candidates to follow the quotas;
    /// handled like a sparse outcome without touching the prunable sets.
    Deficit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchStep {
    pub iteration: usize,
    /// Bounds before the step.
    pub i: usize,
    pub j: usize,
    pub m: usize,
    pub branch: Branch,
    /// Effective sparsity of the candidate; `None` for deficit steps.
    pub effective: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RandomSearchResult {
    #[serde(skip)]
    pub mask: MaskSet,
    #[serde(skip)]
    pub report: ConnectivityReport,
    pub target: f64,
    /// Pruned count of the returned dense bound.
    pub lower: usize,
    /// Pruned count of the final sparse bound.
    pub upper: usize,
    pub iterations: usize,
    /// The sparse bound at the end of the search is disconnected.
    pub unreachable: bool,
    pub trace: Vec<SearchStep>,
}

/// Per-layer sampling sizes `|T_ℓ|` summing to `need`.
///
/// Starts from the quota deltas. Negative deltas and overshoot are trimmed
/// from the highest layer index down. Returns `None` when some layer has
/// fewer candidates than its share.
fn sample_sizes(deltas: &[i64], capacity: &[usize], need: usize) -> Option<Vec<usize>> {
    let mut t: Vec<usize> = deltas.iter().map(|&d| d.max(0) as usize).collect();
    let mut sum: usize = t.iter().sum();
    for l in (0..t.len()).rev() {
        if sum <= need {
            break;
        }
        let cut = (sum - need).min(t[l]);
        t[l] -= cut;
        sum -= cut;
    }
    (sum == need && t.iter().zip(capacity).all(|(&a, &c)| a <= c)).then_some(t)
}

/// Approximate effective random pruning.
///
/// Bisects the global pruned count `m` between a dense bound (effective
/// sparsity below target) and a sparse bound. Each candidate prunes, per
/// layer, a random subset `T_ℓ` of the dense bound's unpruned weights that
/// are still prunable, sized so the candidate follows the quotas `Q(m/N)`.
/// Below target the candidate replaces the dense bound; otherwise `T_ℓ`
/// leaves the prunable set. When a layer cannot supply its `T_ℓ` the step
/// only lowers the sparse bound, so the dense bound always follows the
/// quotas. Returns the final dense bound.
pub fn effective_random_prune(
    arch: &ArchGraph,
    allocator: Allocator,
    target: f64,
    seed: u64,
) -> Result<RandomSearchResult> {
    check_target(target)?;
    let mono = lsq::check_lsq(allocator, arch, &lsq::standard_grid());
    if !mono.layerwise_monotone() {
        return Err(Error::InvalidArgument(format!(
            "{allocator} is not layerwise monotone on `{}`",
            arch.name()
        )));
    }

    let sizes = arch.param_counts().to_vec();
    let total = arch.total_params();
    let mut unpruned = MaskSet::ones(arch);
    let mut prunable = MaskSet::ones(arch);
    let mut dense_report = effective_report(arch, &unpruned)?;
    let (mut i, mut j) = (0usize, total);
    let mut sparse_disconnected = true;
    let mut trace = Vec::new();

    while j - i > 1 {
        let iteration = trace.len();
        let (i0, j0) = (i, j);
        let m = i + (j - i) / 2;
        let quotas = allocator.quotas(m as f64 / total as f64, arch)?;
        let counts: PrunedCounts = lsq::integerize(&quotas, &sizes);
        let current = unpruned.pruned_counts();
        let deltas: Vec<i64> = counts
            .counts
            .iter()
            .zip(&current)
            .map(|(&k, &c)| k as i64 - c as i64)
            .collect();
        let candidates: Vec<Vec<usize>> = (0..sizes.len())
            .map(|l| {
                (0..sizes[l])
                    .filter(|&x| unpruned.layer(l)[x] && prunable.layer(l)[x])
                    .collect()
            })
            .collect();
        let capacity: Vec<usize> = (0..sizes.len())
            .map(|l| {
                let keep_one = unpruned.kept_counts()[l].saturating_sub(1);
                candidates[l].len().min(keep_one)
            })
            .collect();

        let Some(t) = sample_sizes(&deltas, &capacity, m - i) else {
            trace.push(SearchStep {
                iteration,
                i: i0,
                j: j0,
                m,
                branch: Branch::Deficit,
                effective: None,
            });
            j = m;
            continue;
        };

        let mut chosen: Vec<Vec<usize>> = Vec::with_capacity(sizes.len());
        let mut candidate = unpruned.clone();
        for l in 0..sizes.len() {
            let stream = ((iteration as u64) << 32) | l as u64;
            let mut rng = rng::stream(seed, Purpose::EffectiveRandom, stream);
            let picked: Vec<usize> = index::sample(&mut rng, candidates[l].len(), t[l])
                .into_iter()
                .map(|k| candidates[l][k])
                .collect();
            for &x in &picked {
                candidate.layer_mut(l)[x] = false;
            }
            chosen.push(picked);
        }
        let report = effective_report(arch, &candidate)?;
        let eff = report.effective_sparsity;
        let branch = if eff < target {
            unpruned = candidate;
            dense_report = report;
            i = m;
            Branch::Dense
        } else {
            for (l, picked) in chosen.iter().enumerate() {
                for &x in picked {
                    prunable.layer_mut(l)[x] = false;
                }
            }
            sparse_disconnected = report.disconnected();
            j = m;
            Branch::Sparse
        };
        trace.push(SearchStep {
            iteration,
            i: i0,
            j: j0,
            m,
            branch,
            effective: Some(eff),
        });
    }

    Ok(RandomSearchResult {
        mask: unpruned,
        report: dense_report,
        target,
        lower: i,
        upper: j,
        iterations: trace.len(),
        unreachable: sparse_disconnected,
        trace,
    })
}
