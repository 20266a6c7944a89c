use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{build_index, knn_predict, PipelineConfig};
use super::split::stratified_split;
use crate::error::{Error, Result};
use crate::features::{extract_with, fit_normalizer, FeatureSchema, FeatureVector};
use crate::flow::{truncate_flow, Flow};

/// Accuracy gains below this count as no improvement.
pub const PLATEAU_EPSILON: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_packets: usize,
    pub accuracy: f64,
}

/// Closed-set k-NN accuracy with every flow cut to its first `n` packets,
/// for each `n` in `counts`. The train/test partition is drawn once from
/// the flow labels and shared by all points.
pub fn packet_sweep(flows: &[Flow], counts: &[usize], cfg: &PipelineConfig) -> Result<Vec<SweepPoint>> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("no packet counts"));
    }
    if counts[0] == 0 || counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("packet counts must be positive and strictly ascending"));
    }
    let labels: Vec<String> = flows
        .iter()
        .map(|f| f.label.clone().ok_or_else(|| Error::invalid(format!("flow {} has no label", f.id))))
        .collect::<Result<_>>()?;
    let (train, test) = stratified_split(&labels, &cfg.split)?;
    let schema = FeatureSchema::full();

    counts
        .par_iter()
        .map(|&n| {
            let vectors: Vec<FeatureVector> =
                flows.iter().map(|f| extract_with(&truncate_flow(f, n), &schema, &cfg.extract)).collect();
            let train_raw: Vec<FeatureVector> = train.iter().map(|&i| vectors[i].clone()).collect();
            let norm = fit_normalizer(&train_raw)?;
            let scale = |pos: &[usize]| -> Result<Vec<Vec<f64>>> {
                pos.iter().map(|&i| norm.apply(&vectors[i].values)).collect()
            };
            let train_labels: Vec<String> = train.iter().map(|&i| labels[i].clone()).collect();
            let index = build_index(&scale(&train)?, &train_labels, cfg.backend, cfg.leaf_size)?;
            let pred = knn_predict(&index, &scale(&test)?, cfg.calibration.k)?;
            let correct = pred.iter().zip(&test).filter(|(p, &i)| **p == labels[i]).count();
            let accuracy = if test.is_empty() { 0.0 } else { correct as f64 / test.len() as f64 };
            Ok(SweepPoint { n_packets: n, accuracy })
        })
        .collect()
}

/// First packet count after which accuracy improves by less than
/// `epsilon` at the next count.
pub fn plateau(points: &[SweepPoint], epsilon: f64) -> Option<usize> {
    points.windows(2).find(|w| w[1].accuracy - w[0].accuracy < epsilon).map(|w| w[0].n_packets)
}

/// `n_packets,accuracy`, one row per point.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n_packets", "accuracy"])?;
    for p in points {
        w.write_record([p.n_packets.to_string(), p.accuracy.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
