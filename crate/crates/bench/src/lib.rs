//! Shared inputs for the benchmarks.

use prunelens::lsq::{integerize, uniform};
use prunelens::{builtin_arch, random_prune, ArchGraph, MaskSet};

/// A zoo architecture with a uniform random mask at sparsity `s`.
pub fn random_masked(name: &str, s: f64, seed: u64) -> (ArchGraph, MaskSet) {
    let arch = builtin_arch(name).expect("zoo architecture");
    let q = uniform(s, arch.param_counts()).expect("sparsity in range");
    let counts = integerize(&q, arch.param_counts());
    let mask = random_prune(&arch, &counts, seed);
    (arch, mask)
}
