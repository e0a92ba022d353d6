//! Command-line front end for prunelens.

pub mod commands;
pub mod common;
pub mod method;
pub mod svg;
pub mod sweep;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use prunelens::pruners::ScheduleMode;
use prunelens::Allocator;

use crate::commands::Format;
use crate::method::{MethodKind, MethodSpec};

#[derive(Debug, Parser)]
#[command(
    name = "prunelens",
    version,
    about = "Effective sparsity analysis and pruning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct MethodArgs {
    /// random, random-scores, synflow, magnitude, lamp or ingested
    #[arg(long, default_value = "random")]
    pub method: MethodKind,
    /// Layerwise quota allocator (uniform, uniform-plus, erk, erk-redistribute,
    /// smart-ratios, smart-ratios-redistribute, igq)
    #[arg(long)]
    pub lsq: Option<Allocator>,
    /// Pruning iterations for re-scoring methods
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value = "exponential")]
    pub schedule: ScheduleMode,
    /// PLTS scores for `--method ingested`
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

impl MethodArgs {
    fn spec(&self) -> MethodSpec {
        MethodSpec {
            method: self.method,
            lsq: self.lsq,
            iterations: self.iterations,
            schedule: self.schedule,
            scores: self.scores.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prune to a direct sparsity and write the mask
    Prune {
        /// Zoo name or architecture JSON path
        #[arg(long)]
        arch: String,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        sparsity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// PLTS weights; drawn from the seed when absent
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Report file, CSV when the extension is `.csv`, JSON otherwise
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also prune every inactive parameter
        #[arg(long)]
        prune_inactive: bool,
    },
    /// Direct and effective sparsity of a mask
    Analyze {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        mask: PathBuf,
        /// Cross-check against the brute-force graph search
        #[arg(long)]
        oracle: bool,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-layer CSV output
        #[arg(long)]
        layers: Option<PathBuf>,
        /// Label for the method column
        #[arg(long, default_value = "")]
        method: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Layerwise quotas over a sparsity grid
    Quotas {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        lsq: Allocator,
        /// Comma-separated targets; defaults to 0.00, 0.01, ..., 0.99, 0.999
        #[arg(long, value_delimiter = ',')]
        sparsity: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Prune to a target effective sparsity
    EffPrune {
        #[arg(long)]
        arch: String,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        target: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON search summary; defaults to `<out>.json`
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Run a sweep config
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write zero runtimes so repeated runs give identical CSV
        #[arg(long)]
        no_timing: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Built-in architectures
    #[command(subcommand)]
    Arch(ArchCommand),
    /// Kaiming fan-avg weights for an architecture
    GenWeights {
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ArchCommand {
    List,
    Dump {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Info {
        name: String,
    },
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prune {
            arch,
            method,
            sparsity,
            seed,
            weights,
            out,
            report,
            prune_inactive,
        } => commands::prune(commands::PruneArgs {
            arch,
            method: method.spec(),
            sparsity,
            seed,
            weights,
            out,
            report,
            prune_inactive,
        }),
        Command::Analyze {
            arch,
            mask,
            oracle,
            format,
            out,
            layers,
            method,
            seed,
        } => commands::analyze(commands::AnalyzeArgs {
            arch,
            mask,
            oracle,
            format,
            out,
            layers,
            method,
            seed,
        }),
        Command::Quotas {
            arch,
            lsq,
            sparsity,
            out,
            svg,
        } => commands::quotas(commands::QuotasArgs {
            arch,
            lsq,
            sparsities: sparsity,
            out,
            svg,
        }),
        Command::EffPrune {
            arch,
            method,
            target,
            seed,
            weights,
            out,
            sidecar,
        } => commands::eff_prune(commands::EffPruneArgs {
            arch,
            method: method.spec(),
            target,
            seed,
            weights,
            out,
            sidecar,
        }),
        Command::Sweep {
            config,
            out,
            no_timing,
            threads,
        } => commands::sweep(&config, out, no_timing, threads),
        Command::Arch(ArchCommand::List) => commands::arch_list(),
        Command::Arch(ArchCommand::Dump { name, out }) => {
            commands::arch_dump(&name, out.as_deref())
        }
        Command::Arch(ArchCommand::Info { name }) => commands::arch_info(&name),
        Command::GenWeights { arch, seed, out } => commands::gen_weights(&arch, seed, &out),
    }
}

/// Exit status for a failed command: 2 for bad input, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<prunelens::Error>() {
            return match e {
                prunelens::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                e if e.is_input_error() => 2,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return if io.kind() == std::io::ErrorKind::NotFound {
                2
            } else {
                1
            };
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}
