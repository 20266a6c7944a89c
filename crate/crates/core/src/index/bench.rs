//! Build/query timing and recall of each backend against the linear scan.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Backend, Index, IndexConfig, IndexEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendReport {
    pub backend: String,
    pub build_s: f64,
    pub mean_latency_s: f64,
    pub median_latency_s: f64,
    pub qps: f64,
    pub recall_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub n_entries: usize,
    pub dimension: usize,
    pub n_queries: usize,
    pub k: usize,
    pub rows: Vec<BackendReport>,
}

/// Fraction of the exact top-k ids that `got` recovered.
pub(crate) fn recall(exact: &[u64], got: &[u64]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let truth: HashSet<u64> = exact.iter().copied().collect();
    got.iter().filter(|id| truth.contains(id)).count() as f64 / exact.len() as f64
}

/// Benchmarks each configuration in `configs` on the same data. Recall is
/// measured against a brute-force scan of `entries`.
pub fn benchmark_backend(
    entries: &[IndexEntry],
    queries: &[Vec<f64>],
    k: usize,
    configs: &[IndexConfig],
) -> Result<BenchmarkReport> {
    let dimension = entries.first().ok_or(Error::EmptyInput("no entries to benchmark"))?.vector.len();
    if queries.is_empty() {
        return Err(Error::EmptyInput("no queries to benchmark"));
    }
    let oracle = Index::build(entries.to_vec(), IndexConfig::new(Backend::Brute, dimension))?;
    let truth: Vec<Vec<u64>> = queries
        .iter()
        .map(|q| Ok(oracle.query_knn(q, k)?.into_iter().map(|n| n.entry_id).collect()))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let start = Instant::now();
        let index = Index::build(entries.to_vec(), *cfg)?;
        let build_s = start.elapsed().as_secs_f64();

        let mut latencies = Vec::with_capacity(queries.len());
        let mut recall_sum = 0.0;
        let all = Instant::now();
        for (q, exact) in queries.iter().zip(&truth) {
            let t = Instant::now();
            let got = index.query_knn(q, k)?;
            latencies.push(t.elapsed().as_secs_f64());
            let ids: Vec<u64> = got.iter().map(|n| n.entry_id).collect();
            recall_sum += recall(exact, &ids);
        }
        let total = all.elapsed().as_secs_f64();
        latencies.sort_by(f64::total_cmp);
        let n = latencies.len();
        let median = if n % 2 == 1 { latencies[n / 2] } else { (latencies[n / 2 - 1] + latencies[n / 2]) / 2.0 };
        rows.push(BackendReport {
            backend: cfg.backend.to_string(),
            build_s,
            mean_latency_s: latencies.iter().sum::<f64>() / n as f64,
            median_latency_s: median,
            qps: if total > 0.0 { n as f64 / total } else { f64::INFINITY },
            recall_at_k: recall_sum / n as f64,
        });
    }
    Ok(BenchmarkReport { n_entries: entries.len(), dimension, n_queries: queries.len(), k, rows })
}

/// Writes `backend,build_s,qps,recall_at_k`.
pub fn write_benchmark_csv<W: Write>(rows: &[BackendReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["backend", "build_s", "qps", "recall_at_k"])?;
    for r in rows {
        w.write_record([r.backend.clone(), r.build_s.to_string(), r.qps.to_string(), r.recall_at_k.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows in the benchmark CSV layout, e.g. results produced by an
/// external ANN library, so they can be reported side by side.
pub fn read_benchmark_csv<R: Read>(reader: R) -> Result<Vec<BackendReport>> {
    #[derive(Deserialize)]
    struct Row {
        backend: String,
        build_s: f64,
        qps: f64,
        recall_at_k: f64,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        out.push(BackendReport {
            backend: r.backend,
            build_s: r.build_s,
            mean_latency_s: if r.qps > 0.0 { 1.0 / r.qps } else { f64::NAN },
            median_latency_s: f64::NAN,
            qps: r.qps,
            recall_at_k: r.recall_at_k,
        });
    }
    Ok(out)
}
