use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use prunelens::arch::zoo::ZooArch;
use prunelens::lsq::{integerize, standard_grid};
use prunelens::{
    effective_random_prune, effective_report, effective_threshold_prune, init_weights,
    oracle_effective, prune_inactive, write_tensors, Allocator, ArchGraph, ConnectivityReport,
    WeightSet, DEFAULT_ORACLE_UNITS,
};
use serde::Serialize;
use serde_json::json;

use crate::common::{load_arch, load_mask, load_weights, ReportRow};
use crate::method::{MethodKind, MethodSpec};
use crate::svg::{LogLogChart, Series};
use crate::sweep::{self, layer_rows, rows_to_csv, SweepConfig, SweepOptions, LAYER_HEADER};

fn write_or_stdout(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn weights_for(arch: &ArchGraph, path: Option<&Path>, seed: u64) -> anyhow::Result<WeightSet> {
    match path {
        Some(p) => load_weights(p, arch),
        None => Ok(init_weights(arch, seed)),
    }
}

pub struct PruneArgs {
    pub arch: String,
    pub method: MethodSpec,
    pub sparsity: f64,
    pub seed: u64,
    pub weights: Option<PathBuf>,
    pub out: PathBuf,
    pub report: Option<PathBuf>,
    pub prune_inactive: bool,
}

pub fn prune(args: PruneArgs) -> anyhow::Result<()> {
    let arch = load_arch(&args.arch)?;
    args.method.validate()?;
    let weights = weights_for(&arch, args.weights.as_deref(), args.seed)?;
    let mut mask = args
        .method
        .prune(&arch, &weights, args.sparsity, args.seed)?;
    if args.prune_inactive {
        mask = prune_inactive(&arch, &mask)?;
    }
    write_tensors(&mask.to_file(&arch), &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let report = effective_report(&arch, &mask)?;
    let mut row = ReportRow::from_report(arch.name(), &report);
    row.method = args.method.label();
    row.lsq = args.method.lsq_label().to_string();
    row.seed = Some(args.seed);
    row.target_sparsity = Some(args.sparsity);
    if let Some(p) = &args.report {
        write_report(p, &row)?;
    }
    println!("{}", serde_json::to_string_pretty(&row)?);
    Ok(())
}

fn write_report(path: &Path, row: &ReportRow) -> anyhow::Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "csv") {
        rows_to_csv(std::slice::from_ref(row), &ReportRow::HEADER)?
    } else {
        let mut v = serde_json::to_vec_pretty(row)?;
        v.push(b'\n');
        v
    };
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

pub struct AnalyzeArgs {
    pub arch: String,
    pub mask: PathBuf,
    pub oracle: bool,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub layers: Option<PathBuf>,
    pub method: String,
    pub seed: Option<u64>,
}

pub fn analyze(args: AnalyzeArgs) -> anyhow::Result<()> {
    let arch = load_arch(&args.arch)?;
    let mask = load_mask(&args.mask, &arch)?;
    let report = effective_report(&arch, &mask)?;
    let oracle_agrees = if args.oracle {
        let o = oracle_effective(&arch, &mask, DEFAULT_ORACLE_UNITS)?;
        if o.counts() != report.counts() {
            bail!(
                "reachability and brute-force oracle disagree on {}",
                args.mask.display()
            );
        }
        Some(true)
    } else {
        None
    };
    let bytes = match args.format {
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(&json!({
                "arch": arch.name(),
                "report": report,
                "disconnected": report.disconnected(),
                "oracle_agrees": oracle_agrees,
            }))?;
            v.push(b'\n');
            v
        }
        Format::Csv => {
            let mut row = ReportRow::from_report(arch.name(), &report);
            row.method = args.method.clone();
            row.seed = args.seed;
            rows_to_csv(&[row], &ReportRow::HEADER)?
        }
    };
    write_or_stdout(args.out.as_deref(), &bytes)?;
    if let Some(p) = &args.layers {
        let rows = layer_rows(
            arch.name(),
            &args.method,
            args.seed.unwrap_or(0),
            report.direct_sparsity,
            &report,
        );
        fs::write(p, rows_to_csv(&rows, &LAYER_HEADER)?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct QuotaRow {
    target_sparsity: f64,
    layer_index: usize,
    layer_id: String,
    params: usize,
    sparsity: Option<f64>,
    compression: Option<f64>,
    pruned: Option<usize>,
    status: String,
}

const QUOTA_HEADER: [&str; 8] = [
    "target_sparsity",
    "layer_index",
    "layer_id",
    "params",
    "sparsity",
    "compression",
    "pruned",
    "status",
];

pub struct QuotasArgs {
    pub arch: String,
    pub lsq: Allocator,
    pub sparsities: Vec<f64>,
    pub out: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

pub fn quotas(args: QuotasArgs) -> anyhow::Result<()> {
    let arch = load_arch(&args.arch)?;
    let grid = if args.sparsities.is_empty() {
        standard_grid()
    } else {
        args.sparsities.clone()
    };
    let sizes = arch.param_counts();
    let mut rows = Vec::new();
    let mut series: Vec<Series> = (0..arch.num_layers())
        .map(|l| Series {
            label: arch.layer_id(l).to_string(),
            ..Series::default()
        })
        .collect();
    for &s in &grid {
        match args.lsq.quotas(s, &arch) {
            Ok(q) => {
                let counts = integerize(&q, sizes);
                for l in 0..arch.num_layers() {
                    let c = 1.0 / (1.0 - q.sparsities[l]);
                    series[l].points.push((1.0 / (1.0 - s), c));
                    rows.push(QuotaRow {
                        target_sparsity: s,
                        layer_index: l,
                        layer_id: arch.layer_id(l).to_string(),
                        params: sizes[l],
                        sparsity: Some(q.sparsities[l]),
                        compression: Some(c),
                        pruned: Some(counts.counts[l]),
                        status: "ok".into(),
                    });
                }
            }
            Err(e) => {
                for (l, &params) in sizes.iter().enumerate() {
                    rows.push(QuotaRow {
                        target_sparsity: s,
                        layer_index: l,
                        layer_id: arch.layer_id(l).to_string(),
                        params,
                        sparsity: None,
                        compression: None,
                        pruned: None,
                        status: format!("infeasible: {e}"),
                    });
                }
            }
        }
    }
    write_or_stdout(args.out.as_deref(), &rows_to_csv(&rows, &QUOTA_HEADER)?)?;
    if let Some(p) = &args.svg {
        let chart = LogLogChart {
            title: format!("{} layerwise compression ({})", arch.name(), args.lsq),
            x_label: "global compression".into(),
            y_label: "layer compression".into(),
            series,
            diagonal: false,
        };
        fs::write(p, chart.render()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub struct EffPruneArgs {
    pub arch: String,
    pub method: MethodSpec,
    pub target: f64,
    pub seed: u64,
    pub weights: Option<PathBuf>,
    pub out: PathBuf,
    pub sidecar: Option<PathBuf>,
}

pub fn eff_prune(args: EffPruneArgs) -> anyhow::Result<()> {
    let arch = load_arch(&args.arch)?;
    args.method.validate()?;
    let (mask, report, sidecar) = if args.method.method == MethodKind::Random {
        let lsq = args.method.lsq.unwrap_or(Allocator::Uniform);
        let r = effective_random_prune(&arch, lsq, args.target, args.seed)?;
        let trace = serde_json::to_value(&r.trace)?;
        let side = sidecar_json(&arch, &args, &r.report, r.iterations, r.unreachable, trace);
        (r.mask, r.report, side)
    } else {
        let weights = weights_for(&arch, args.weights.as_deref(), args.seed)?;
        let provider = args
            .method
            .provider(&arch, args.seed)?
            .expect("ranking methods have a provider");
        let ranking = provider.ranking(&arch, &weights, &prunelens::MaskSet::ones(&arch))?;
        let r = effective_threshold_prune(&arch, ranking.keys(), args.target)?;
        let trace = serde_json::to_value(&r.trace)?;
        let side = sidecar_json(&arch, &args, &r.report, r.evaluations, r.unreachable, trace);
        (r.mask, r.report, side)
    };
    write_tensors(&mask.to_file(&arch), &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let sidecar_path = args.sidecar.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".json");
        PathBuf::from(p)
    });
    let mut bytes = serde_json::to_vec_pretty(&sidecar)?;
    bytes.push(b'\n');
    fs::write(&sidecar_path, bytes)
        .with_context(|| format!("writing {}", sidecar_path.display()))?;
    println!(
        "effective {:.6} (direct {:.6}) -> {}",
        report.effective_sparsity,
        report.direct_sparsity,
        args.out.display()
    );
    Ok(())
}

fn sidecar_json(
    arch: &ArchGraph,
    args: &EffPruneArgs,
    report: &ConnectivityReport,
    iterations: usize,
    unreachable: bool,
    trace: serde_json::Value,
) -> serde_json::Value {
    json!({
        "arch": arch.name(),
        "method": args.method.label(),
        "seed": args.seed,
        "target": args.target,
        "achieved_effective": report.effective_sparsity,
        "achieved_direct": report.direct_sparsity,
        "iterations": iterations,
        "unreachable": unreachable,
        "trace": trace,
    })
}

pub fn sweep(
    config: &Path,
    out: Option<PathBuf>,
    no_timing: bool,
    threads: Option<usize>,
) -> anyhow::Result<()> {
    let cfg = SweepConfig::from_path(config)?;
    let dir = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("sweep-out"));
    let result = sweep::run_sweep(&cfg, SweepOptions { no_timing, threads })?;
    let arch_name = load_arch(&cfg.arch)?.name().to_string();
    sweep::write_outputs(&dir, &arch_name, &result)?;
    let failed = result.rows.iter().filter(|r| !r.errors.is_empty()).count();
    println!(
        "{} cells ({failed} failed) -> {}",
        result.rows.len(),
        dir.join("results.csv").display()
    );
    Ok(())
}

pub fn arch_list() -> anyhow::Result<()> {
    let mut text = String::new();
    for a in ZooArch::ALL {
        let g = a.build();
        text += &format!(
            "{:<12} {:>3} layers {:>12} params\n",
            a.name(),
            g.num_layers(),
            g.total_params()
        );
    }
    write_or_stdout(None, text.as_bytes())
}

pub fn arch_dump(spec: &str, out: Option<&Path>) -> anyhow::Result<()> {
    let arch = load_arch(spec)?;
    let mut text = arch.to_json();
    text.push('\n');
    write_or_stdout(out, text.as_bytes())
}

pub fn arch_info(spec: &str) -> anyhow::Result<()> {
    let arch = load_arch(spec)?;
    println!(
        "{}: {} prunable layers, {} parameters",
        arch.name(),
        arch.num_layers(),
        arch.total_params()
    );
    for l in 0..arch.num_layers() {
        let dims: Vec<String> = arch.weight_dims(l).iter().map(usize::to_string).collect();
        println!(
            "  {:>3} {:<24} [{}] {}",
            l,
            arch.layer_id(l),
            dims.join("x"),
            arch.param_counts()[l]
        );
    }
    Ok(())
}

pub fn gen_weights(spec: &str, seed: u64, out: &Path) -> anyhow::Result<()> {
    let arch = load_arch(spec)?;
    let w = init_weights(&arch, seed);
    write_tensors(&w.to_file(&arch), out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
