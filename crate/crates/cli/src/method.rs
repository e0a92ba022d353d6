//! Pruning methods addressable from the command line and sweep configs.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use prunelens::lsq::integerize;
use prunelens::pruners::{one_shot_prune, ScheduleMode};
use prunelens::{
    iterative_prune, layerwise_prune, random_prune, read_tensors, Allocator, ArchGraph, Error,
    IterSchedule, MaskSet, ScoreProvider, ScoreSet, WeightSet,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    /// Random pruning under layerwise quotas.
    Random,
    /// Global ranking by uniform random scores.
    RandomScores,
    Synflow,
    Magnitude,
    Lamp,
    /// Scores read from a PLTS file.
    Ingested,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Random => "random",
            MethodKind::RandomScores => "random-scores",
            MethodKind::Synflow => "synflow",
            MethodKind::Magnitude => "magnitude",
            MethodKind::Lamp => "lamp",
            MethodKind::Ingested => "ingested",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "random" => MethodKind::Random,
            "random-scores" => MethodKind::RandomScores,
            "synflow" => MethodKind::Synflow,
            "magnitude" => MethodKind::Magnitude,
            "lamp" => MethodKind::Lamp,
            "ingested" => MethodKind::Ingested,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown method `{other}` (expected random, random-scores, synflow, magnitude, lamp, ingested)"
                )))
            }
        })
    }
}

/// A method plus everything needed to turn (arch, weights, sparsity, seed) into a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: MethodKind,
    /// Quota allocator. Required for `random`; turns score methods into
    /// layerwise pruning.
    #[serde(default, with = "opt_allocator")]
    pub lsq: Option<Allocator>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleMode,
    #[serde(default)]
    pub scores: Option<PathBuf>,
}

fn default_schedule() -> ScheduleMode {
    ScheduleMode::Exponential
}

mod opt_allocator {
    use prunelens::Allocator;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Allocator>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(a) => s.serialize_str(a.label()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Allocator>, D::Error> {
        let v: Option<String> = Option::deserialize(d)?;
        v.map(|s| s.parse().map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl MethodSpec {
    pub fn new(method: MethodKind) -> Self {
        MethodSpec {
            method,
            lsq: None,
            iterations: None,
            schedule: ScheduleMode::Exponential,
            scores: None,
        }
    }

    /// Short label used in CSV rows and plot legends.
    pub fn label(&self) -> String {
        let mut s = self.method.name().to_string();
        if let Some(a) = self.lsq {
            s.push('/');
            s.push_str(a.label());
        }
        if let Some(n) = self.iterations {
            if self.uses_iterations() {
                s.push_str(&format!("@{n}"));
            }
        }
        s
    }

    pub fn lsq_label(&self) -> &'static str {
        self.lsq.map_or("", |a| a.label())
    }

    fn uses_iterations(&self) -> bool {
        self.lsq.is_none()
            && matches!(
                self.method,
                MethodKind::Synflow | MethodKind::Magnitude | MethodKind::Lamp
            )
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.method == MethodKind::Ingested && self.scores.is_none() {
            return Err(Error::InvalidArgument(
                "method `ingested` needs a scores file".into(),
            ));
        }
        if self.method != MethodKind::Ingested && self.scores.is_some() {
            return Err(Error::InvalidArgument(format!(
                "a scores file only applies to `ingested`, not `{}`",
                self.method
            )));
        }
        if self.iterations == Some(0) {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        Ok(())
    }

    /// Score provider for ranking-based methods; `None` for quota-random pruning.
    pub fn provider(&self, arch: &ArchGraph, seed: u64) -> Result<Option<ScoreProvider>, Error> {
        Ok(match self.method {
            MethodKind::Random => None,
            MethodKind::RandomScores => Some(ScoreProvider::Random { seed }),
            MethodKind::Synflow => Some(ScoreProvider::Synflow),
            MethodKind::Magnitude => Some(ScoreProvider::Magnitude),
            MethodKind::Lamp => Some(ScoreProvider::Lamp),
            MethodKind::Ingested => {
                let path = self.scores.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("method `ingested` needs a scores file".into())
                })?;
                let scores = ScoreSet::from_file(read_tensors(path)?, arch)?;
                Some(ScoreProvider::Ingested(scores))
            }
        })
    }

    /// Prune to direct sparsity `sparsity`.
    pub fn prune(
        &self,
        arch: &ArchGraph,
        weights: &WeightSet,
        sparsity: f64,
        seed: u64,
    ) -> Result<MaskSet, Error> {
        self.validate()?;
        let sizes = arch.param_counts();
        let Some(provider) = self.provider(arch, seed)? else {
            let lsq = self.lsq.unwrap_or(Allocator::Uniform);
            let counts = integerize(&lsq.quotas(sparsity, arch)?, sizes);
            return Ok(random_prune(arch, &counts, seed));
        };
        if let Some(lsq) = self.lsq {
            let counts = integerize(&lsq.quotas(sparsity, arch)?, sizes);
            let scores = provider.scores(arch, weights, &MaskSet::ones(arch))?;
            return Ok(layerwise_prune(&scores, &counts));
        }
        if !provider.recomputable() {
            return one_shot_prune(arch, weights, &provider, sparsity);
        }
        let schedule = IterSchedule {
            iterations: self.iterations.unwrap_or(DEFAULT_ITERATIONS),
            mode: self.schedule,
            sparsity,
        };
        iterative_prune(arch, weights, &provider, &schedule)
    }
}
