//! Seeded sweeps over (method, sparsity, seed) cells.
//!
//! Cells are pure functions of the config, so they run on a bounded rayon
//! pool and are sorted by (method, target sparsity, seed) before writing.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use prunelens::{effective_report, init_weights, ArchGraph, ConnectivityReport, WeightSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::common::{load_arch, load_weights, ReportRow};
use crate::method::MethodSpec;
use crate::svg::{LogLogChart, Series};

pub const THREADS_ENV: &str = "PRUNELENS_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    /// `points` direct compressions spaced evenly in log scale.
    LogCompression {
        from: f64,
        to: f64,
        points: usize,
    },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::List(v) => v.clone(),
            Grid::LogCompression { from, to, points } => match points {
                0 => Vec::new(),
                1 => vec![1.0 - 1.0 / from],
                n => (0..*n)
                    .map(|k| {
                        let t = k as f64 / (n - 1) as f64;
                        let c = (from.ln() + t * (to.ln() - from.ln())).exp();
                        1.0 - 1.0 / c
                    })
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Zoo name or path to an architecture JSON file.
    pub arch: String,
    pub methods: Vec<MethodSpec>,
    pub sparsities: Grid,
    pub seeds: Vec<u64>,
    /// Optional PLTS weights shared by all cells; otherwise each seed draws its own.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    pub fn from_path(path: &Path) -> anyhow::Result<SweepConfig> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: SweepConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        for s in self.sparsities.values() {
            if !(0.0..1.0).contains(&s) {
                bail!(prunelens::Error::InvalidArgument(format!(
                    "grid value {s} outside [0, 1)"
                )));
            }
        }
        let mut seen = HashSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                bail!(prunelens::Error::InvalidArgument(format!(
                    "seed {s} listed twice"
                )));
            }
        }
        for m in &self.methods {
            m.validate()?;
            if let Some(p) = &m.scores {
                if !p.exists() {
                    bail!(prunelens::Error::InvalidArgument(format!(
                        "scores file {} not found",
                        p.display()
                    )));
                }
            }
        }
        if let Some(p) = &self.weights {
            if !p.exists() {
                bail!(prunelens::Error::InvalidArgument(format!(
                    "weights file {} not found",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Write `runtime_ms = 0` so output is byte-identical across runs.
    pub no_timing: bool,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerRow {
    pub arch: String,
    pub method: String,
    pub seed: u64,
    pub target_sparsity: f64,
    pub layer_index: usize,
    pub layer_id: String,
    pub params: u64,
    pub pruned: u64,
    pub inactive_unpruned: u64,
    pub active: u64,
}

pub fn layer_rows(
    arch: &str,
    method: &str,
    seed: u64,
    target: f64,
    report: &ConnectivityReport,
) -> Vec<LayerRow> {
    report
        .layers
        .iter()
        .zip(&report.layer_ids)
        .enumerate()
        .map(|(l, (c, id))| LayerRow {
            arch: arch.to_string(),
            method: method.to_string(),
            seed,
            target_sparsity: target,
            layer_index: l,
            layer_id: id.clone(),
            params: c.params,
            pruned: c.pruned,
            inactive_unpruned: c.inactive_unpruned,
            active: c.active,
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub rows: Vec<ReportRow>,
    pub layers: Vec<LayerRow>,
}

/// Worker count: the requested value (or all cores), capped by `PRUNELENS_THREADS`.
pub fn worker_count(requested: Option<usize>) -> usize {
    let base = requested
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    cap.map_or(base, |c| base.min(c))
}

struct Cell<'a> {
    method: &'a MethodSpec,
    label: String,
    sparsity: f64,
    seed: u64,
}

fn run_cell(
    arch: &ArchGraph,
    shared: Option<&WeightSet>,
    cell: &Cell,
    no_timing: bool,
) -> (ReportRow, Vec<LayerRow>) {
    let start = Instant::now();
    let result = (|| -> Result<ConnectivityReport, prunelens::Error> {
        let drawn;
        let weights = match shared {
            Some(w) => w,
            None => {
                drawn = init_weights(arch, cell.seed);
                &drawn
            }
        };
        let mask = cell.method.prune(arch, weights, cell.sparsity, cell.seed)?;
        effective_report(arch, &mask)
    })();
    let runtime_ms = if no_timing {
        0
    } else {
        start.elapsed().as_millis() as u64
    };
    let mut row = ReportRow::empty(
        arch.name(),
        &cell.label,
        cell.method.lsq_label(),
        cell.seed,
        cell.sparsity,
    );
    row.runtime_ms = runtime_ms;
    match result {
        Ok(report) => {
            row.fill(&report);
            let layers = layer_rows(arch.name(), &cell.label, cell.seed, cell.sparsity, &report);
            (row, layers)
        }
        Err(e) => {
            row.errors = e.to_string();
            (row, Vec::new())
        }
    }
}

pub fn run_sweep(config: &SweepConfig, opts: SweepOptions) -> anyhow::Result<SweepOutput> {
    config.validate()?;
    let arch = load_arch(&config.arch)?;
    let shared = config
        .weights
        .as_deref()
        .map(|p| load_weights(p, &arch))
        .transpose()?;
    let grid = config.sparsities.values();
    let mut cells = Vec::new();
    for m in &config.methods {
        for &s in &grid {
            for &seed in &config.seeds {
                cells.push(Cell {
                    method: m,
                    label: m.label(),
                    sparsity: s,
                    seed,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(opts.threads.or(config.threads)))
        .build()
        .context("building worker pool")?;
    let mut results: Vec<(ReportRow, Vec<LayerRow>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(&arch, shared.as_ref(), c, opts.no_timing))
            .collect()
    });
    results.sort_by(|a, b| {
        a.0.method
            .cmp(&b.0.method)
            .then(
                a.0.target_sparsity
                    .unwrap_or_default()
                    .total_cmp(&b.0.target_sparsity.unwrap_or_default()),
            )
            .then(a.0.seed.cmp(&b.0.seed))
    });
    let mut out = SweepOutput::default();
    for (row, layers) in results {
        out.rows.push(row);
        out.layers.extend(layers);
    }
    Ok(out)
}

pub fn rows_to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().context("flushing CSV")
}

pub const LAYER_HEADER: [&str; 10] = [
    "arch",
    "method",
    "seed",
    "target_sparsity",
    "layer_index",
    "layer_id",
    "params",
    "pruned",
    "inactive_unpruned",
    "active",
];

/// Effective vs direct compression per method: mean line with a min/max band over seeds.
pub fn compression_chart(arch: &str, rows: &[ReportRow]) -> LogLogChart {
    let mut groups: BTreeMap<&str, BTreeMap<u64, Vec<&ReportRow>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.errors.is_empty()) {
        groups
            .entry(r.method.as_str())
            .or_default()
            .entry(r.target_sparsity.unwrap_or_default().to_bits())
            .or_default()
            .push(r);
    }
    let series = groups
        .into_iter()
        .map(|(label, cells)| {
            let mut s = Series {
                label: label.to_string(),
                ..Series::default()
            };
            let mut cells: Vec<_> = cells.into_values().collect();
            cells.sort_by(|a, b| {
                let (x, y) = (
                    a[0].target_sparsity.unwrap_or_default(),
                    b[0].target_sparsity.unwrap_or_default(),
                );
                x.total_cmp(&y)
            });
            for cell in cells {
                let n = cell.len() as f64;
                let x = cell
                    .iter()
                    .filter_map(|r| r.direct_compression)
                    .sum::<f64>()
                    / n;
                let eff: Vec<f64> = cell
                    .iter()
                    .filter_map(|r| r.effective_compression)
                    .collect();
                let mean = eff.iter().sum::<f64>() / n;
                let lo = eff.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = eff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                s.points.push((x, mean));
                s.band.push((x, lo, hi));
            }
            s
        })
        .collect();
    LogLogChart {
        title: format!("{arch}: effective vs direct compression"),
        x_label: "direct compression".into(),
        y_label: "effective compression".into(),
        series,
        diagonal: true,
    }
}

/// Write `results.csv`, `layers.csv` and `compression.svg` into `dir`.
pub fn write_outputs(dir: &Path, arch: &str, out: &SweepOutput) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(
        dir.join("results.csv"),
        rows_to_csv(&out.rows, &ReportRow::HEADER)?,
    )?;
    fs::write(
        dir.join("layers.csv"),
        rows_to_csv(&out.layers, &LAYER_HEADER)?,
    )?;
    fs::write(
        dir.join("compression.svg"),
        compression_chart(arch, &out.rows).render(),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid() {
        let g = Grid::LogCompression {
            from: 10.0,
            to: 1000.0,
            points: 3,
        };
        let v = g.values();
        assert_eq!(v.len(), 3);
        assert!((v[0] - 0.9).abs() < 1e-12);
        assert!((v[1] - 0.99).abs() < 1e-12);
        assert!((v[2] - 0.999).abs() < 1e-12);
        let list: Grid = serde_json::from_str("[0.5, 0.9]").unwrap();
        assert_eq!(list.values(), vec![0.5, 0.9]);
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let cfg: SweepConfig = serde_json::from_str(
            r#"{"arch":"lenet300100","methods":[{"method":"random","lsq":"uniform"}],
                "sparsities":[0.5],"seeds":[1,1]}"#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_grid_header_only() {
        let cfg: SweepConfig = serde_json::from_str(
            r#"{"arch":"lenet300100","methods":[{"method":"random"}],"sparsities":[],"seeds":[0]}"#,
        )
        .unwrap();
        let out = run_sweep(
            &cfg,
            SweepOptions {
                no_timing: true,
                threads: Some(1),
            },
        )
        .unwrap();
        assert!(out.rows.is_empty());
        let csv = String::from_utf8(rows_to_csv(&out.rows, &ReportRow::HEADER).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }
}
