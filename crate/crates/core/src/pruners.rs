//! Mask producers: random pruning under quotas, score thresholds, iterative
//! re-scoring, and within-layer shuffling.
//!
//! Every ranking uses one total order: higher score first, then lower layer
//! index, then lower flat index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ArchGraph;
use crate::connectivity::synflow_log_scores;
use crate::error::{Error, Result};
use crate::lsq::PrunedCounts;
use crate::rng::{self, Purpose};
use crate::tensor::{MaskSet, ScoreSet, WeightSet};

/// Keep the `keep` best entries among `eligible` (all when `None`).
///
/// `keys` only need a total order; log-domain scores work unchanged.
pub fn top_k(keys: &[Vec<f64>], eligible: Option<&MaskSet>, keep: usize) -> MaskSet {
    let is_eligible = |l: usize, i: usize| eligible.is_none_or(|m| m.layer(l)[i]);
    let mut pool: Vec<f64> = Vec::new();
    for (l, layer) in keys.iter().enumerate() {
        for (i, &k) in layer.iter().enumerate() {
            if is_eligible(l, i) {
                pool.push(k);
            }
        }
    }
    let mut out: Vec<Vec<bool>> = keys.iter().map(|l| vec![false; l.len()]).collect();
    if keep == 0 || pool.is_empty() {
        return MaskSet::new(out);
    }
    let keep = keep.min(pool.len());
    let (_, &mut cut, _) = pool.select_nth_unstable_by(keep - 1, |a, b| b.total_cmp(a));
    let above = pool
        .iter()
        .filter(|&&k| k.total_cmp(&cut) == Ordering::Greater)
        .count();
    let mut ties = keep - above;
    for (l, layer) in keys.iter().enumerate() {
        for (i, &k) in layer.iter().enumerate() {
            if !is_eligible(l, i) {
                continue;
            }
            match k.total_cmp(&cut) {
                Ordering::Greater => out[l][i] = true,
                Ordering::Equal if ties > 0 => {
                    out[l][i] = true;
                    ties -= 1;
                }
                _ => {}
            }
        }
    }
    MaskSet::new(out)
}

/// Keep the `keep` highest-scoring parameters across all layers.
pub fn threshold_prune_global(scores: &ScoreSet, keep: usize) -> MaskSet {
    top_k(scores.layers(), None, keep)
}

/// Within each layer, prune the `counts[ℓ]` lowest-scoring parameters.
pub fn layerwise_prune(scores: &ScoreSet, counts: &PrunedCounts) -> MaskSet {
    let layers = scores
        .layers()
        .iter()
        .zip(&counts.counts)
        .map(|(layer, &k)| {
            let keep = layer.len().saturating_sub(k);
            let one = top_k(std::slice::from_ref(layer), None, keep);
            one.layers()[0].clone()
        })
        .collect();
    MaskSet::new(layers)
}

/// Prune a uniformly random subset of exactly `counts[ℓ]` parameters in each layer.
pub fn random_prune(arch: &ArchGraph, counts: &PrunedCounts, seed: u64) -> MaskSet {
    let layers = arch
        .param_counts()
        .iter()
        .zip(&counts.counts)
        .enumerate()
        .map(|(l, (&n, &k))| {
            let mut rng = rng::stream(seed, Purpose::RandomPrune, l as u64);
            let mut layer = vec![true; n];
            for i in index::sample(&mut rng, n, k.min(n)) {
                layer[i] = false;
            }
            layer
        })
        .collect();
    MaskSet::new(layers)
}

/// Redraw each layer uniformly at random with its unpruned count unchanged.
pub fn shuffle_mask(mask: &MaskSet, seed: u64) -> MaskSet {
    let layers = mask
        .layers()
        .iter()
        .enumerate()
        .map(|(l, old)| {
            let n = old.len();
            let kept = old.iter().filter(|&&b| b).count();
            let mut rng = rng::stream(seed, Purpose::Shuffle, l as u64);
            let mut layer = vec![false; n];
            for i in index::sample(&mut rng, n, kept) {
                layer[i] = true;
            }
            layer
        })
        .collect();
    MaskSet::new(layers)
}

/// `|w| · M`.
pub fn magnitude_scores(weights: &WeightSet, mask: &MaskSet) -> ScoreSet {
    let layers = weights
        .layers()
        .iter()
        .zip(mask.layers())
        .map(|(w, m)| {
            w.iter()
                .zip(m)
                .map(|(&w, &keep)| if keep { w.abs() } else { 0.0 })
                .collect()
        })
        .collect();
    ScoreSet::new(layers).expect("checked weights give finite magnitudes")
}

/// LAMP scores: `w_u² / Σ_{v ranked at or above u} w_v²` over unpruned weights.
///
/// Rank is ascending `w²`; equal magnitudes are ranked so that the lower flat
/// index ends up with the larger score, which keeps the in-layer order
/// identical to magnitude ranking under the global tie-break.
pub fn lamp_scores(weights: &WeightSet, mask: &MaskSet) -> ScoreSet {
    let layers = weights
        .layers()
        .iter()
        .zip(mask.layers())
        .map(|(w, m)| {
            let mut idx: Vec<usize> = (0..w.len()).filter(|&i| m[i]).collect();
            idx.sort_by(|&a, &b| (w[a] * w[a]).total_cmp(&(w[b] * w[b])).then(b.cmp(&a)));
            let mut scores = vec![0.0; w.len()];
            let mut suffix = 0.0;
            for &i in idx.iter().rev() {
                let sq = w[i] * w[i];
                suffix += sq;
                scores[i] = if suffix > 0.0 { sq / suffix } else { 0.0 };
            }
            scores
        })
        .collect();
    ScoreSet::new(layers).expect("LAMP scores lie in [0, 1]")
}

/// Uniform `[0, 1)` scores from the score stream of `seed`, zero where pruned.
pub fn random_scores(arch: &ArchGraph, mask: &MaskSet, seed: u64) -> ScoreSet {
    let layers = (0..arch.num_layers())
        .map(|l| {
            let mut rng = rng::stream(seed, Purpose::RandomScores, l as u64);
            mask.layer(l)
                .iter()
                .map(|&keep| {
                    let v: f64 = rng.random();
                    if keep {
                        v
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    ScoreSet::new(layers).expect("uniform draws are finite and non-negative")
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreProvider {
    Synflow,
    Magnitude,
    Lamp,
    Random { seed: u64 },
    Ingested(ScoreSet),
}

/// Scores in a form suitable for ranking.
#[derive(Debug, Clone, PartialEq)]
pub enum Ranking {
    Linear(ScoreSet),
    /// Natural-log scores with `-inf` for zero.
    Log(Vec<Vec<f64>>),
}

impl Ranking {
    pub fn keys(&self) -> &[Vec<f64>] {
        match self {
            Ranking::Linear(s) => s.layers(),
            Ranking::Log(l) => l,
        }
    }

    pub fn is_positive(&self, layer: usize, idx: usize) -> bool {
        match self {
            Ranking::Linear(s) => s.layer(layer)[idx] > 0.0,
            Ranking::Log(l) => l[layer][idx] > f64::NEG_INFINITY,
        }
    }
}

impl ScoreProvider {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreProvider::Synflow => "synflow",
            ScoreProvider::Magnitude => "magnitude",
            ScoreProvider::Lamp => "lamp",
            ScoreProvider::Random { .. } => "random",
            ScoreProvider::Ingested(_) => "ingested",
        }
    }

    pub fn recomputable(&self) -> bool {
        !matches!(self, ScoreProvider::Ingested(_))
    }

    /// Scores on the current mask, with pruned entries ranked lowest.
    pub fn ranking(
        &self,
        arch: &ArchGraph,
        weights: &WeightSet,
        mask: &MaskSet,
    ) -> Result<Ranking> {
        mask.check(arch)?;
        Ok(match self {
            ScoreProvider::Synflow => {
                weights.check(arch)?;
                Ranking::Log(synflow_log_scores(arch, weights, mask)?.layers)
            }
            ScoreProvider::Magnitude => {
                weights.check(arch)?;
                Ranking::Linear(magnitude_scores(weights, mask))
            }
            ScoreProvider::Lamp => {
                weights.check(arch)?;
                Ranking::Linear(lamp_scores(weights, mask))
            }
            ScoreProvider::Random { seed } => Ranking::Linear(random_scores(arch, mask, *seed)),
            ScoreProvider::Ingested(s) => {
                s.check(arch)?;
                let layers = s
                    .layers()
                    .iter()
                    .zip(mask.layers())
                    .map(|(s, m)| {
                        s.iter()
                            .zip(m)
                            .map(|(&v, &k)| if k { v } else { 0.0 })
                            .collect()
                    })
                    .collect();
                Ranking::Linear(ScoreSet::new(layers)?)
            }
        })
    }

    /// Scores as a plain `ScoreSet`. SynFlow scores are rescaled per layer
    /// so the largest entry in each layer is 1.
    pub fn scores(
        &self,
        arch: &ArchGraph,
        weights: &WeightSet,
        mask: &MaskSet,
    ) -> Result<ScoreSet> {
        if let ScoreProvider::Synflow = self {
            mask.check(arch)?;
            weights.check(arch)?;
            return Ok(synflow_log_scores(arch, weights, mask)?.to_layer_scaled());
        }
        match self.ranking(arch, weights, mask)? {
            Ranking::Linear(s) => Ok(s),
            Ranking::Log(_) => unreachable!(),
        }
    }
}

impl fmt::Display for ScoreProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Density `(1 - s)^{k/n}`.
    Exponential,
    /// Sparsity `s · k / n`.
    Linear,
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(ScheduleMode::Exponential),
            "linear" => Ok(ScheduleMode::Linear),
            other => Err(Error::InvalidArgument(format!(
                "unknown schedule `{other}` (expected exponential or linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterSchedule {
    pub iterations: usize,
    pub mode: ScheduleMode,
    pub sparsity: f64,
}

impl IterSchedule {
    pub fn exponential(iterations: usize, sparsity: f64) -> Self {
        IterSchedule {
            iterations,
            mode: ScheduleMode::Exponential,
            sparsity,
        }
    }

    /// Kept-parameter counts after each iteration, for `total` parameters.
    ///
    /// The last entry is exactly `total - round(s · total)`.
    pub fn keep_counts(&self, total: usize) -> Result<Vec<usize>> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::InvalidArgument(format!(
                "target sparsity {} outside [0, 1]",
                self.sparsity
            )));
        }
        let n = self.iterations;
        let last = total - crate::lsq::global_pruned_target(self.sparsity, total);
        let mut prev = total;
        let mut out = Vec::with_capacity(n);
        for k in 1..=n {
            let keep = if k == n {
                last
            } else {
                let frac = k as f64 / n as f64;
                let density = match self.mode {
                    ScheduleMode::Exponential => (1.0 - self.sparsity).powf(frac),
                    ScheduleMode::Linear => 1.0 - self.sparsity * frac,
                };
                ((density * total as f64).round() as usize).clamp(last, prev)
            };
            out.push(keep);
            prev = keep;
        }
        Ok(out)
    }
}

/// Multi-shot pruning: re-score on the current mask, then keep the top
/// parameters among those still unpruned, once per schedule step.
pub fn iterative_prune(
    arch: &ArchGraph,
    weights: &WeightSet,
    provider: &ScoreProvider,
    schedule: &IterSchedule,
) -> Result<MaskSet> {
    iterative_prune_from(arch, weights, provider, schedule, MaskSet::ones(arch))
}

/// As [`iterative_prune`], starting from an existing mask.
pub fn iterative_prune_from(
    arch: &ArchGraph,
    weights: &WeightSet,
    provider: &ScoreProvider,
    schedule: &IterSchedule,
    start: MaskSet,
) -> Result<MaskSet> {
    if !provider.recomputable() {
        return Err(Error::InvalidArgument(format!(
            "{} scores cannot be recomputed between iterations; use single-shot pruning",
            provider.name()
        )));
    }
    start.check(arch)?;
    let mut mask = start;
    for keep in schedule.keep_counts(arch.total_params())? {
        if keep >= mask.total_kept() {
            continue;
        }
        let ranking = provider.ranking(arch, weights, &mask)?;
        mask = top_k(ranking.keys(), Some(&mask), keep);
    }
    Ok(mask)
}

/// Single-shot global pruning to sparsity `s` with one scoring pass.
pub fn one_shot_prune(
    arch: &ArchGraph,
    weights: &WeightSet,
    provider: &ScoreProvider,
    sparsity: f64,
) -> Result<MaskSet> {
    let total = arch.total_params();
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!(
            "target sparsity {sparsity} outside [0, 1]"
        )));
    }
    let keep = total - crate::lsq::global_pruned_target(sparsity, total);
    let ranking = provider.ranking(arch, weights, &MaskSet::ones(arch))?;
    Ok(top_k(ranking.keys(), None, keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::zoo::builtin_arch;
    use crate::tensor::init_weights;

    fn scores(v: Vec<Vec<f64>>) -> ScoreSet {
        ScoreSet::new(v).unwrap()
    }

    #[test]
    fn threshold_extremes() {
        let s = scores(vec![vec![0.3, 0.1], vec![0.2]]);
        assert_eq!(threshold_prune_global(&s, 3).total_kept(), 3);
        assert_eq!(threshold_prune_global(&s, 0).total_kept(), 0);
        assert_eq!(
            threshold_prune_global(&s, 2).layers(),
            &[vec![true, false], vec![true]]
        );
    }

    #[test]
    fn ties_prefer_lower_layer_then_lower_index() {
        let s = scores(vec![vec![1.0, 1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(
            threshold_prune_global(&s, 4).layers(),
            &[vec![true, true, true], vec![true, false]]
        );
        assert_eq!(
            threshold_prune_global(&s, 2).layers(),
            &[vec![true, true, false], vec![false, false]]
        );
    }

    #[test]
    fn eligible_entries_only() {
        let keys = vec![vec![5.0, 4.0, 3.0]];
        let elig = MaskSet::new(vec![vec![false, true, true]]);
        assert_eq!(
            top_k(&keys, Some(&elig), 1).layers(),
            &[vec![false, true, false]]
        );
        assert_eq!(top_k(&keys, Some(&elig), 9).total_kept(), 2);
    }

    #[test]
    fn layerwise_counts() {
        let s = scores(vec![vec![0.5, 0.1, 0.9, 0.2], vec![1.0, 1.0]]);
        let m = layerwise_prune(&s, &PrunedCounts { counts: vec![2, 1] });
        assert_eq!(
            m.layers(),
            &[vec![true, false, true, false], vec![true, false]]
        );
        let m = layerwise_prune(&s, &PrunedCounts { counts: vec![0, 0] });
        assert_eq!(m.total_kept(), 6);
    }

    #[test]
    fn random_prune_exact_counts() {
        let g = builtin_arch("lenet300100").unwrap();
        let counts = PrunedCounts {
            counts: vec![1000, 30000, 0],
        };
        let m = random_prune(&g, &counts, 3);
        assert_eq!(m.pruned_counts(), vec![1000, 30000, 0]);
        assert_eq!(m, random_prune(&g, &counts, 3));
        assert_ne!(m, random_prune(&g, &counts, 4));
    }

    #[test]
    fn shuffle_preserves_counts() {
        let m = MaskSet::new(vec![vec![true, false, true, false, false], vec![true; 3]]);
        let s = shuffle_mask(&m, 11);
        assert_eq!(s.kept_counts(), m.kept_counts());
        assert_eq!(s.layer(1), m.layer(1));
    }

    #[test]
    fn magnitude_and_lamp() {
        let w = WeightSet::new(vec![vec![-2.0, 0.5, 0.0, 1.0]]);
        let m = MaskSet::new(vec![vec![true, true, true, false]]);
        assert_eq!(magnitude_scores(&w, &m).layer(0), &[2.0, 0.5, 0.0, 0.0]);
        let l = lamp_scores(&w, &m);
        assert_eq!(l.layer(0), &[1.0, 0.25 / 4.25, 0.0, 0.0]);

        let w = WeightSet::new(vec![vec![1.0, 1.0]]);
        let l = lamp_scores(&w, &MaskSet::new(vec![vec![true, true]]));
        assert_eq!(l.layer(0), &[1.0, 0.5]);
        let single = lamp_scores(
            &WeightSet::new(vec![vec![0.3]]),
            &MaskSet::new(vec![vec![true]]),
        );
        assert_eq!(single.layer(0), &[1.0]);
    }

    #[test]
    fn schedule_counts() {
        let s = IterSchedule::exponential(4, 0.9375);
        assert_eq!(s.keep_counts(1600).unwrap(), vec![800, 400, 200, 100]);
        let one = IterSchedule::exponential(1, 0.99);
        assert_eq!(one.keep_counts(266200).unwrap(), vec![2662]);
        assert!(IterSchedule::exponential(0, 0.5).keep_counts(10).is_err());
        let lin = IterSchedule {
            iterations: 2,
            mode: ScheduleMode::Linear,
            sparsity: 0.5,
        };
        assert_eq!(lin.keep_counts(100).unwrap(), vec![75, 50]);
    }

    #[test]
    fn single_iteration_equals_one_shot() {
        let g = builtin_arch("lenet5").unwrap();
        let w = init_weights(&g, 1);
        for p in [
            ScoreProvider::Magnitude,
            ScoreProvider::Synflow,
            ScoreProvider::Lamp,
        ] {
            let a = iterative_prune(&g, &w, &p, &IterSchedule::exponential(1, 0.9)).unwrap();
            let b = one_shot_prune(&g, &w, &p, 0.9).unwrap();
            assert_eq!(a, b, "{p}");
        }
    }

    #[test]
    fn ingested_rejected_for_iterative() {
        let g = builtin_arch("lenet300100").unwrap();
        let w = init_weights(&g, 0);
        let s = ScoreSet::new(g.param_counts().iter().map(|&n| vec![1.0; n]).collect()).unwrap();
        let err = iterative_prune(
            &g,
            &w,
            &ScoreProvider::Ingested(s),
            &IterSchedule::exponential(3, 0.5),
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }
}
