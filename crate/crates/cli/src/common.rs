use std::fs;
use std::path::Path;

use anyhow::Context;
use prunelens::{builtin_arch, read_tensors, ArchGraph, ConnectivityReport, MaskSet, WeightSet};
use serde::Serialize;

/// A zoo name, or a path to an architecture JSON file.
pub fn load_arch(spec: &str) -> anyhow::Result<ArchGraph> {
    let path = Path::new(spec);
    if path.is_file() {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return ArchGraph::parse(&text)
            .with_context(|| format!("loading architecture {}", path.display()));
    }
    Ok(builtin_arch(spec)?)
}

pub fn load_weights(path: &Path, arch: &ArchGraph) -> anyhow::Result<WeightSet> {
    let file = read_tensors(path).with_context(|| format!("reading weights {}", path.display()))?;
    WeightSet::from_file(file, arch).with_context(|| format!("weights {}", path.display()))
}

pub fn load_mask(path: &Path, arch: &ArchGraph) -> anyhow::Result<MaskSet> {
    let file = read_tensors(path).with_context(|| format!("reading mask {}", path.display()))?;
    MaskSet::from_file(file, arch).with_context(|| format!("mask {}", path.display()))
}

/// One summary row for analyze, prune and sweep output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub arch: String,
    pub method: String,
    pub lsq: String,
    pub seed: Option<u64>,
    pub target_sparsity: Option<f64>,
    pub direct_sparsity: Option<f64>,
    pub effective_sparsity: Option<f64>,
    pub direct_compression: Option<f64>,
    pub effective_compression: Option<f64>,
    pub disconnected: Option<bool>,
    pub runtime_ms: u64,
    pub errors: String,
}

impl ReportRow {
    pub const HEADER: [&'static str; 12] = [
        "arch",
        "method",
        "lsq",
        "seed",
        "target_sparsity",
        "direct_sparsity",
        "effective_sparsity",
        "direct_compression",
        "effective_compression",
        "disconnected",
        "runtime_ms",
        "errors",
    ];

    pub fn empty(arch: &str, method: &str, lsq: &str, seed: u64, target: f64) -> Self {
        ReportRow {
            arch: arch.to_string(),
            method: method.to_string(),
            lsq: lsq.to_string(),
            seed: Some(seed),
            target_sparsity: Some(target),
            direct_sparsity: None,
            effective_sparsity: None,
            direct_compression: None,
            effective_compression: None,
            disconnected: None,
            runtime_ms: 0,
            errors: String::new(),
        }
    }

    pub fn from_report(arch: &str, report: &ConnectivityReport) -> Self {
        let mut row = ReportRow {
            arch: arch.to_string(),
            method: String::new(),
            lsq: String::new(),
            seed: None,
            target_sparsity: None,
            direct_sparsity: None,
            effective_sparsity: None,
            direct_compression: None,
            effective_compression: None,
            disconnected: None,
            runtime_ms: 0,
            errors: String::new(),
        };
        row.fill(report);
        row
    }

    pub fn fill(&mut self, report: &ConnectivityReport) {
        self.direct_sparsity = Some(report.direct_sparsity);
        self.effective_sparsity = Some(report.effective_sparsity);
        self.direct_compression = Some(report.direct_compression);
        self.effective_compression = Some(report.effective_compression);
        self.disconnected = Some(report.disconnected());
    }
}
