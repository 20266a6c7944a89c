use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use super::split::{stratified_split, SplitSpec};
use crate::cbr::{assess, calibrate_thresholds, vote, CalibrationConfig, Thresholds, VerdictKind};
use crate::error::{Error, Result};
use crate::features::{fit_normalizer, ExtractOptions, FeatureVector, NormalizationParams};
use crate::forest::{train_forest, Forest, ForestConfig};
use crate::index::{Backend, BenchmarkReport, Index, IndexConfig, IndexEntry, DEFAULT_LEAF_SIZE};

/// Prediction recorded for a sample the retrieval stage rejected as OOD.
pub const OOD_LABEL: &str = "<ood>";
/// Prediction recorded for a sample held back as a new-class candidate.
pub const PENDING_LABEL: &str = "<pending>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub extract: ExtractOptions,
    pub backend: Backend,
    pub leaf_size: usize,
    pub calibration: CalibrationConfig,
    pub forest: ForestConfig,
    pub split: SplitSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            extract: ExtractOptions::default(),
            backend: Backend::KdTree,
            leaf_size: DEFAULT_LEAF_SIZE,
            calibration: CalibrationConfig::default(),
            forest: ForestConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

/// A labeled dataset split and min-max scaled with training statistics.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalizer: NormalizationParams,
    pub train: Vec<Vec<f64>>,
    pub train_labels: Vec<String>,
    pub test: Vec<Vec<f64>>,
    pub test_labels: Vec<String>,
    /// Positions of the test samples in the input.
    pub test_positions: Vec<usize>,
}

impl Prepared {
    pub fn classes(&self) -> Vec<String> {
        let mut c = self.train_labels.clone();
        c.sort();
        c.dedup();
        c
    }
}

pub fn labels_of(vectors: &[FeatureVector]) -> Result<Vec<String>> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| v.label.clone().ok_or_else(|| Error::invalid(format!("feature vector {i} has no label"))))
        .collect()
}

/// Splits labeled vectors and fits the normalizer on the training side.
pub fn prepare(vectors: &[FeatureVector], split: &SplitSpec) -> Result<Prepared> {
    let labels = labels_of(vectors)?;
    let (train_pos, test_pos) = stratified_split(&labels, split)?;
    let train_raw: Vec<FeatureVector> = train_pos.iter().map(|&i| vectors[i].clone()).collect();
    let normalizer = fit_normalizer(&train_raw)?;
    let scale = |pos: &[usize]| -> Result<Vec<Vec<f64>>> {
        pos.iter().map(|&i| normalizer.apply(&vectors[i].values)).collect()
    };
    Ok(Prepared {
        train: scale(&train_pos)?,
        train_labels: train_pos.iter().map(|&i| labels[i].clone()).collect(),
        test: scale(&test_pos)?,
        test_labels: test_pos.iter().map(|&i| labels[i].clone()).collect(),
        test_positions: test_pos,
        normalizer,
    })
}

/// Index over `vectors` with ids `0..n` in input order.
pub fn build_index(vectors: &[Vec<f64>], labels: &[String], backend: Backend, leaf_size: usize) -> Result<Index> {
    if vectors.len() != labels.len() {
        return Err(Error::LengthMismatch { left: vectors.len(), right: labels.len() });
    }
    let dimension = vectors.first().ok_or(Error::EmptyInput("no vectors to index"))?.len();
    let entries = vectors
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (v, l))| IndexEntry::new(i as u64, l.clone(), v.clone()))
        .collect();
    Index::build(entries, IndexConfig { backend, leaf_size, dimension })
}

/// Plain k-NN majority vote, no rejection.
pub fn knn_predict(index: &Index, queries: &[Vec<f64>], k: usize) -> Result<Vec<String>> {
    queries.iter().map(|q| Ok(vote(&index.query_knn(q, k)?).map(|(l, _)| l).unwrap_or_default())).collect()
}

/// Read-only open-set predictions: rejected samples get [`OOD_LABEL`] or
/// [`PENDING_LABEL`]. Nothing is buffered or registered.
pub fn open_set_predict(index: &Index, queries: &[Vec<f64>], th: &Thresholds) -> Result<Vec<String>> {
    queries
        .iter()
        .map(|q| {
            let v = assess(index, q, th)?;
            Ok(match v.kind {
                VerdictKind::Known => v.label.unwrap_or_default(),
                VerdictKind::Ood => OOD_LABEL.to_string(),
                _ => PENDING_LABEL.to_string(),
            })
        })
        .collect()
}

/// Retrieval gate followed by the forest, without buffering.
pub fn ensemble_predict(index: &Index, forest: &Forest, queries: &[Vec<f64>], th: &Thresholds) -> Result<Vec<String>> {
    let gated = open_set_predict(index, queries, th)?;
    gated
        .into_iter()
        .zip(queries)
        .map(|(g, q)| if g == OOD_LABEL || g == PENDING_LABEL { Ok(g) } else { Ok(forest.predict(q)?.0) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_train: usize,
    pub n_test: usize,
    pub thresholds: Thresholds,
    /// k-NN vote with every test sample forced into a known class.
    pub cbr_closed: Metrics,
    /// k-NN vote behind the new-class and OOD thresholds.
    pub cbr_open: Metrics,
    pub forest: Metrics,
    pub ensemble: Metrics,
    pub forest_oob_accuracy: Option<f64>,
}

/// Trains every model on the training split and scores it on the test split.
pub fn evaluate(vectors: &[FeatureVector], cfg: &PipelineConfig) -> Result<EvalReport> {
    let p = prepare(vectors, &cfg.split)?;
    let classes = p.classes();
    let index = build_index(&p.train, &p.train_labels, cfg.backend, cfg.leaf_size)?;
    let th = calibrate_thresholds(&p.train, &p.train_labels, &cfg.calibration)?;
    let forest = train_forest(&p.train, &p.train_labels, &cfg.forest)?;

    let score = |pred: Vec<String>| compute_metrics(&p.test_labels, &pred, &classes);
    Ok(EvalReport {
        n_train: p.train.len(),
        n_test: p.test.len(),
        thresholds: th,
        cbr_closed: score(knn_predict(&index, &p.test, th.k)?)?,
        cbr_open: score(open_set_predict(&index, &p.test, &th)?)?,
        forest: score(p.test.iter().map(|q| Ok(forest.predict(q)?.0)).collect::<Result<_>>()?)?,
        ensemble: score(ensemble_predict(&index, &forest, &p.test, &th)?)?,
        forest_oob_accuracy: forest.oob_accuracy,
    })
}

/// Points whose nearest indexed neighbor is at least `min_distance` away.
/// Each starts at a random entry and moves along a random direction,
/// stepping outwards until it clears the distance.
pub fn ood_probes(index: &Index, count: usize, min_distance: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if !(min_distance > 0.0 && min_distance.is_finite()) {
        return Err(Error::invalid("probe distance must be positive and finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = index.entries();
    let mut probes = Vec::with_capacity(count);
    while probes.len() < count {
        let anchor = &entries[rng.random_range(0..entries.len())].vector;
        let dir: Vec<f64> = (0..anchor.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut r = min_distance;
        loop {
            let p: Vec<f64> = anchor.iter().zip(&dir).map(|(a, d)| a + r * d / norm).collect();
            if index.query_knn(&p, 1)?[0].distance >= min_distance {
                probes.push(p);
                break;
            }
            r *= 1.5;
        }
    }
    Ok(probes)
}

/// Benchmarks every backend on uniform random data in the unit cube.
pub fn run_ann_benchmark(
    n: usize,
    dimension: usize,
    n_queries: usize,
    k: usize,
    leaf_size: usize,
    seed: u64,
) -> Result<BenchmarkReport> {
    if n == 0 || dimension == 0 || n_queries == 0 {
        return Err(Error::invalid("benchmark sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<IndexEntry> =
        (0..n as u64).map(|i| IndexEntry::new(i, "x", (0..dimension).map(|_| rng.random::<f64>()).collect())).collect();
    let queries: Vec<Vec<f64>> =
        (0..n_queries).map(|_| (0..dimension).map(|_| rng.random::<f64>()).collect()).collect();
    let configs: Vec<IndexConfig> =
        Backend::ALL.iter().map(|&backend| IndexConfig { backend, leaf_size, dimension }).collect();
    crate::index::benchmark_backend(&entries, &queries, k, &configs)
}
