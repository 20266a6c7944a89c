//! `flowcbr`: extraction, indexing, classification and evaluation from the
//! command line.
//!
//! Exit status is 0 on success, 2 when arguments, configuration or input
//! contents fail validation, and 1 for any other failure.

mod commands;
mod config;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowcbr_core::index::DEFAULT_LEAF_SIZE;
use flowcbr_core::{Backend, Error};

use crate::commands::{ClassifyOptions, IndexOptions, Source};
use crate::config::{RunConfig, ThresholdOverrides};

/// A validation failure: bad flags, config or input contents.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "flowcbr", version, about = "Classification by retrieval for encrypted traffic flows")]
struct Cli {
    /// Seed for splits, forests, probes and synthetic data [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML run configuration; flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory [default: .]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a capture or flow CSV into a feature matrix (features.csv)
    Extract {
        /// pcap capture or per-packet flow CSV
        #[arg(long, short)]
        input: PathBuf,
        /// Label attached to every flow lacking one
        #[arg(long)]
        label: Option<String>,
    },
    /// Build and save an index with its normalizer and thresholds
    Index {
        /// Labeled feature matrix, flow CSV or capture
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long)]
        label: Option<String>,
        /// Selection mask JSON applied after normalization
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Also train and save a random forest on the same vectors
        #[arg(long)]
        forest: bool,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Classify flows against a saved index, one JSON verdict per line
    Classify {
        /// Directory written by `index`
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Feature matrix, flow CSV or capture
        #[arg(long, short)]
        input: PathBuf,
        /// Label known verdicts with the saved forest
        #[arg(long)]
        ensemble: bool,
        /// Write the updated index and class registry to the output directory
        #[arg(long)]
        persist: bool,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Train/test evaluation of retrieval, forest and ensemble
    Eval {
        #[command(flatten)]
        source: SourceArgs,
        /// Also run the new-class protocol with this class held out
        #[arg(long)]
        held_out: Option<String>,
        /// Cohesive samples needed to register a new class
        #[arg(long)]
        c_min: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Accuracy as a function of the number of packets per flow
    Sweep {
        #[command(flatten)]
        source: SourceArgs,
        /// Ascending packet counts, comma separated
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Build time, throughput and recall of every index backend
    Bench {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        dimension: Option<usize>,
        #[arg(long)]
        queries: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        leaf_size: Option<usize>,
        /// Benchmark CSVs from other tools to merge into the report
        #[arg(long)]
        external: Vec<PathBuf>,
    },
    /// Write synthetic labeled flows (flows.csv)
    Synth {
        /// standard, standard+novel or prefix
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        per_class: Option<usize>,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// Feature matrix, flow CSV or capture; synthetic flows when absent
    #[arg(long, short)]
    input: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    /// Synthetic preset used without --input
    #[arg(long, conflicts_with = "input")]
    preset: Option<String>,
    #[arg(long, conflicts_with = "input")]
    per_class: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// brute, kdtree or balltree
    #[arg(long)]
    backend: Option<Backend>,
    #[arg(long)]
    leaf_size: Option<usize>,
    /// Trees in the random forest
    #[arg(long)]
    trees: Option<usize>,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Neighbors consulted per query
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    theta_new: Option<f64>,
    #[arg(long)]
    theta_ood: Option<f64>,
    #[arg(long)]
    c_min: Option<usize>,
    #[arg(long)]
    r_cohesion: Option<f64>,
}

impl ThresholdArgs {
    fn overrides(&self) -> ThresholdOverrides {
        ThresholdOverrides {
            k: self.k,
            theta_new: self.theta_new,
            theta_ood: self.theta_ood,
            c_min: self.c_min,
            r_cohesion: self.r_cohesion,
        }
    }
}

fn pipeline(cfg: &RunConfig, m: &ModelArgs) -> flowcbr_core::eval::PipelineConfig {
    let mut p = cfg.seeded_pipeline();
    if let Some(b) = m.backend {
        p.backend = b;
    }
    if let Some(l) = m.leaf_size {
        p.leaf_size = l;
    }
    if let Some(t) = m.trees {
        p.forest.n_trees = t;
    }
    p
}

fn source<'a>(cfg: &RunConfig, s: &'a SourceArgs) -> Source<'a> {
    match &s.input {
        Some(path) => Source::File { path, label: s.label.as_deref() },
        None => Source::Preset {
            name: s.preset.clone().unwrap_or_else(|| cfg.synth.preset.clone()),
            per_class: s.per_class.unwrap_or(cfg.synth.per_class),
        },
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    match cli.command {
        Command::Extract { input, label } => commands::extract(&cfg, &input, label.as_deref()),
        Command::Index { input, label, mask, forest, model, thresholds } => {
            let p = pipeline(&cfg, &model);
            let opts = IndexOptions {
                input: &input,
                label: label.as_deref(),
                mask: mask.as_deref(),
                forest,
                thresholds: thresholds.overrides().over(cfg.thresholds),
            };
            commands::index(&cfg, &p, opts)
        }
        Command::Classify { model, input, ensemble, persist, thresholds } => commands::classify_stream(
            &cfg,
            ClassifyOptions { model: &model, input: &input, thresholds: thresholds.overrides(), ensemble, persist },
        ),
        Command::Eval { source: s, held_out, c_min, model } => {
            let p = pipeline(&cfg, &model);
            let c_min = c_min.or(cfg.thresholds.c_min).unwrap_or(p.calibration.c_min);
            commands::eval(&cfg, &p, source(&cfg, &s), held_out.as_deref().map(|h| (h, c_min)))
        }
        Command::Sweep { source: s, counts, model } => {
            let p = pipeline(&cfg, &model);
            let counts = counts.unwrap_or_else(|| cfg.sweep.counts.clone());
            commands::sweep(&cfg, &p, source(&cfg, &s), &counts)
        }
        Command::Bench { n, dimension, queries, k, leaf_size, external } => {
            let b = &mut cfg.bench;
            b.n = n.unwrap_or(b.n);
            b.dimension = dimension.unwrap_or(b.dimension);
            b.queries = queries.unwrap_or(b.queries);
            b.k = k.unwrap_or(b.k);
            let leaf = leaf_size.unwrap_or(if cfg.pipeline.leaf_size > 0 {
                cfg.pipeline.leaf_size
            } else {
                DEFAULT_LEAF_SIZE
            });
            commands::bench(&cfg, leaf, &external)
        }
        Command::Synth { preset, per_class } => {
            let preset = preset.unwrap_or_else(|| cfg.synth.preset.clone());
            let per_class = per_class.unwrap_or(cfg.synth.per_class);
            commands::synth(&cfg, &preset, per_class)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidArgument(_)
                | Error::DimensionMismatch { .. }
                | Error::SchemaMismatch { .. }
                | Error::EmptyInput(_)
                | Error::TooFewClasses(_)
                | Error::ClassAbsent(_)
                | Error::LengthMismatch { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWCBR_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
