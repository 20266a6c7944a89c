use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use flowcbr_core::cbr::{calibrate_thresholds, classify, VerdictRecord};
use flowcbr_core::eval::{
    build_index, evaluate, labels_of, new_class_protocol, packet_sweep, plateau, run_ann_benchmark, write_json,
    write_metrics_csv, write_sweep_csv, Metrics, PipelineConfig, SweepPoint,
};
use flowcbr_core::features::{fit_normalizer, normalize, write_feature_csv, FeatureVector, NormalizationParams};
use flowcbr_core::flow::write_flows_csv;
use flowcbr_core::forest::{ensemble_classify, train_forest};
use flowcbr_core::index::{read_benchmark_csv, write_benchmark_csv};
use flowcbr_core::select::apply_mask;
use flowcbr_core::{ClassRegistry, Forest, Index, SelectionMask, Thresholds};
use serde::Serialize;

use crate::config::{RunConfig, ThresholdOverrides};
use crate::input::{self, Loaded};
use crate::Invalid;

pub const INDEX_FILE: &str = "index.json";
pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const MASK_FILE: &str = "mask.json";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const REGISTRY_FILE: &str = "registry.json";
pub const FOREST_FILE: &str = "forest.json";

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn save_json<T: Serialize>(value: &T, dir: &Path, name: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(value, dir.join(name))?;
    Ok(())
}

pub fn extract(cfg: &RunConfig, input_path: &Path, label: Option<&str>) -> anyhow::Result<()> {
    let loaded = input::load(input_path, label)?;
    if let Loaded::Features(_) = loaded {
        return Err(Invalid(format!("{} is already a feature matrix", input_path.display())).into());
    }
    let vectors = input::into_features(loaded, &cfg.pipeline.extract);
    let mut w = create(&cfg.out, "features.csv")?;
    write_feature_csv(&vectors, &mut w)?;
    w.flush()?;
    log::info!("wrote {} feature rows", vectors.len());
    Ok(())
}

/// Everything `index` persists and `classify` reloads.
pub struct Model {
    pub index: Index,
    pub normalizer: NormalizationParams,
    pub mask: Option<SelectionMask>,
    pub thresholds: Thresholds,
    pub registry: ClassRegistry,
    pub forest: Option<Forest>,
}

impl Model {
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let index =
            Index::load(dir.join(INDEX_FILE)).with_context(|| format!("loading index from {}", dir.display()))?;
        let mask_path = dir.join(MASK_FILE);
        let forest_path = dir.join(FOREST_FILE);
        let registry_path = dir.join(REGISTRY_FILE);
        Ok(Model {
            normalizer: read_json(&dir.join(NORMALIZER_FILE))?,
            mask: if mask_path.exists() { Some(read_json(&mask_path)?) } else { None },
            thresholds: read_json(&dir.join(THRESHOLDS_FILE))?,
            registry: if registry_path.exists() {
                ClassRegistry::load(&registry_path)?
            } else {
                ClassRegistry::from_index(&index)
            },
            forest: if forest_path.exists() { Some(Forest::load(&forest_path)?) } else { None },
            index,
        })
    }

    /// Raw features to the space the index lives in.
    pub fn vectorize(&self, v: &FeatureVector) -> anyhow::Result<Vec<f64>> {
        vectorize(v, &self.normalizer, self.mask.as_ref())
    }
}

fn vectorize(
    v: &FeatureVector,
    normalizer: &NormalizationParams,
    mask: Option<&SelectionMask>,
) -> anyhow::Result<Vec<f64>> {
    let n = normalize(v, normalizer)?;
    Ok(match mask {
        Some(m) => apply_mask(&n, m)?.values,
        None => n.values,
    })
}

pub struct IndexOptions<'a> {
    pub input: &'a Path,
    pub label: Option<&'a str>,
    pub mask: Option<&'a Path>,
    pub forest: bool,
    pub thresholds: ThresholdOverrides,
}

pub fn index(cfg: &RunConfig, pipeline: &PipelineConfig, opts: IndexOptions<'_>) -> anyhow::Result<()> {
    let vectors = input::into_features(input::load(opts.input, opts.label)?, &pipeline.extract);
    let labels = labels_of(&vectors)?;
    let normalizer = fit_normalizer(&vectors)?;
    let mask: Option<SelectionMask> = opts.mask.map(read_json).transpose()?;
    let rows: Vec<Vec<f64>> =
        vectors.iter().map(|v| vectorize(v, &normalizer, mask.as_ref())).collect::<anyhow::Result<_>>()?;

    let index = build_index(&rows, &labels, pipeline.backend, pipeline.leaf_size)?;
    let th = opts.thresholds.apply(calibrate_thresholds(&rows, &labels, &pipeline.calibration)?);
    th.validate()?;
    log::info!("indexed {} vectors of width {}; thresholds {:?}", index.len(), index.dimension(), th);

    fs::create_dir_all(&cfg.out)?;
    index.save(cfg.out.join(INDEX_FILE))?;
    save_json(&normalizer, &cfg.out, NORMALIZER_FILE)?;
    if let Some(m) = &mask {
        save_json(m, &cfg.out, MASK_FILE)?;
    }
    save_json(&th, &cfg.out, THRESHOLDS_FILE)?;
    ClassRegistry::from_index(&index).save(cfg.out.join(REGISTRY_FILE))?;
    if opts.forest {
        let forest = train_forest(&rows, &labels, &pipeline.forest)?;
        forest.save(cfg.out.join(FOREST_FILE))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EnsembleLine<'a> {
    flow_id: &'a str,
    #[serde(flatten)]
    verdict: flowcbr_core::EnsembleVerdict,
}

pub struct ClassifyOptions<'a> {
    pub model: &'a Path,
    pub input: &'a Path,
    pub thresholds: ThresholdOverrides,
    pub ensemble: bool,
    pub persist: bool,
}

/// Streams every input vector through the live index in input order.
pub fn classify_stream(cfg: &RunConfig, opts: ClassifyOptions<'_>) -> anyhow::Result<()> {
    let mut model = Model::load(opts.model)?;
    let th = opts.thresholds.over(cfg.thresholds).apply(model.thresholds);
    th.validate()?;
    let forest = match (opts.ensemble, model.forest.take()) {
        (false, _) => None,
        (true, Some(f)) => Some(f),
        (true, None) => {
            return Err(Invalid(format!("--ensemble needs {} in {}", FOREST_FILE, opts.model.display())).into())
        }
    };
    let vectors = input::into_features(input::load(opts.input, None)?, &cfg.pipeline.extract);

    let mut w = create(&cfg.out, "verdicts.jsonl")?;
    for (i, v) in vectors.iter().enumerate() {
        let q = model.vectorize(v)?;
        let flow_id = v.flow_ref.clone().unwrap_or_else(|| i.to_string());
        match &forest {
            Some(f) => {
                let verdict = ensemble_classify(&mut model.index, &mut model.registry, f, &q, &th)?;
                serde_json::to_writer(&mut w, &EnsembleLine { flow_id: &flow_id, verdict })?;
            }
            None => {
                let verdict = classify(&mut model.index, &mut model.registry, &q, &th)?;
                serde_json::to_writer(&mut w, &VerdictRecord::new(flow_id, &verdict))?;
            }
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    if opts.persist {
        model.index.save(cfg.out.join(INDEX_FILE))?;
        model.registry.save(cfg.out.join(REGISTRY_FILE))?;
    }
    Ok(())
}

/// Where eval and sweep get their flows from.
pub enum Source<'a> {
    File { path: &'a Path, label: Option<&'a str> },
    Preset { name: String, per_class: usize },
}

impl Source<'_> {
    fn features(&self, pipeline: &PipelineConfig, seed: u64) -> anyhow::Result<Vec<FeatureVector>> {
        match self {
            Source::File { path, label } => Ok(input::into_features(input::load(path, *label)?, &pipeline.extract)),
            Source::Preset { .. } => {
                let flows = self.flows(seed)?;
                Ok(flowcbr_core::features::extract_all(&flows, &flowcbr_core::FeatureSchema::full(), &pipeline.extract))
            }
        }
    }

    fn flows(&self, seed: u64) -> anyhow::Result<Vec<flowcbr_core::Flow>> {
        match self {
            Source::File { path, label } => input::into_flows(input::load(path, *label)?, path),
            Source::Preset { name, per_class } => input::synthesize(name, *per_class, seed),
        }
    }
}

fn write_metrics(m: &Metrics, dir: &Path, name: &str) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    write_metrics_csv(m, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn eval(
    cfg: &RunConfig,
    pipeline: &PipelineConfig,
    source: Source<'_>,
    held_out: Option<(&str, usize)>,
) -> anyhow::Result<()> {
    let vectors = source.features(pipeline, cfg.seed)?;
    let report = evaluate(&vectors, pipeline)?;
    write_metrics(&report.cbr_closed, &cfg.out, "metrics_cbr.csv")?;
    write_metrics(&report.cbr_open, &cfg.out, "metrics_cbr_open.csv")?;
    write_metrics(&report.forest, &cfg.out, "metrics_forest.csv")?;
    write_metrics(&report.ensemble, &cfg.out, "metrics_ensemble.csv")?;
    save_json(&report, &cfg.out, "eval.json")?;
    println!(
        "macro-F1  cbr {:.4}  cbr-open {:.4}  forest {:.4}  ensemble {:.4}",
        report.cbr_closed.macro_f1, report.cbr_open.macro_f1, report.forest.macro_f1, report.ensemble.macro_f1
    );
    if let Some((class, c_min)) = held_out {
        let r = new_class_protocol(&vectors, class, c_min, pipeline)?;
        save_json(&r, &cfg.out, "new_class.json")?;
        println!(
            "held out {class}: registered after {:?} samples, recall {:.4}, max F1 drop {:.4}",
            r.samples_before_registration, r.held_out_recall_after, r.max_f1_drop
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    epsilon: f64,
    plateau: Option<usize>,
    points: &'a [SweepPoint],
}

pub fn sweep(cfg: &RunConfig, pipeline: &PipelineConfig, source: Source<'_>, counts: &[usize]) -> anyhow::Result<()> {
    let flows = source.flows(cfg.seed)?;
    let points = packet_sweep(&flows, counts, pipeline)?;
    let mut w = create(&cfg.out, "sweep.csv")?;
    write_sweep_csv(&points, &mut w)?;
    w.flush()?;
    let p = plateau(&points, cfg.sweep.epsilon);
    save_json(&SweepSummary { epsilon: cfg.sweep.epsilon, plateau: p, points: &points }, &cfg.out, "sweep.json")?;
    match p {
        Some(n) => println!("plateau at {n} packets"),
        None => println!("no plateau within the swept counts"),
    }
    Ok(())
}

pub fn bench(cfg: &RunConfig, leaf_size: usize, external: &[PathBuf]) -> anyhow::Result<()> {
    let b = cfg.bench;
    let mut report = run_ann_benchmark(b.n, b.dimension, b.queries, b.k, leaf_size, cfg.seed)?;
    for path in external {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        report.rows.extend(read_benchmark_csv(f).with_context(|| format!("reading {}", path.display()))?);
    }
    let mut w = create(&cfg.out, "bench.csv")?;
    write_benchmark_csv(&report.rows, &mut w)?;
    w.flush()?;
    save_json(&report, &cfg.out, "bench.json")?;
    for r in &report.rows {
        println!(
            "{:<10} build {:>9.4}s  {:>10.1} q/s  recall@{} {:.3}",
            r.backend, r.build_s, r.qps, b.k, r.recall_at_k
        );
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, preset: &str, per_class: usize) -> anyhow::Result<()> {
    let flows = input::synthesize(preset, per_class, cfg.seed)?;
    let mut w = create(&cfg.out, "flows.csv")?;
    write_flows_csv(&flows, &mut w)?;
    w.flush()?;
    log::info!("wrote {} flows", flows.len());
    Ok(())
}
