//! Effective sparsity analysis and pruning for feed-forward networks.
//!
//! Architectures are validated DAGs of dense, conv, pool, flatten and add
//! nodes. Masks, weights and scores are stored per prunable layer in a
//! pinned flat index order and exchanged as PLTS files.

pub mod arch;
pub mod connectivity;
pub mod effprune;
pub mod error;
pub mod lsq;
pub mod pruners;
pub mod rng;
pub mod tensor;

pub use arch::zoo::{builtin_arch, ZooArch};
pub use arch::{ArchGraph, Conv2d, Dense, LayerNode, NodeKind, Pool2d, PoolMode, Shape};
pub use connectivity::{
    active_mask, effective_report, oracle_effective, prune_inactive, reachability,
    synflow_log_scores, synflow_scores, ConnectivityReport, LayerCounts, LogScores, ReachState,
    DEFAULT_ORACLE_UNITS,
};
pub use effprune::{
    effective_random_prune, effective_threshold_prune, RandomSearchResult, ThresholdResult,
};
pub use error::{Error, Result};
pub use lsq::{
    check_lsq, integerize, Allocator, ClampMode, ComplianceReport, PrunedCounts, QuotaVector,
};
pub use pruners::{
    iterative_prune, layerwise_prune, random_prune, shuffle_mask, threshold_prune_global,
    IterSchedule, ScoreProvider,
};
pub use tensor::{
    direct_sparsity, init_weights, read_tensors, write_tensors, MaskSet, ScoreSet, SparsityCount,
    TensorFile, WeightSet,
};
