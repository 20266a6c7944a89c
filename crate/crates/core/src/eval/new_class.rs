use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::compute_metrics;
use super::pipeline::{build_index, labels_of, open_set_predict, PipelineConfig};
use super::split::stratified_split;
use crate::cbr::{calibrate_thresholds, classify, ClassRegistry, Thresholds, VerdictKind};
use crate::error::{Error, Result};
use crate::features::{fit_normalizer, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredClass {
    pub label: String,
    /// True class held by most of the founding samples.
    pub mapped_to: String,
    pub founding_samples: usize,
}

/// One classified sample of the mixed stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamItem {
    pub true_label: String,
    pub kind: VerdictKind,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewClassReport {
    pub held_out: String,
    pub thresholds: Thresholds,
    pub registered: Vec<RegisteredClass>,
    /// Held-out samples streamed up to and including the one that triggered
    /// the first registration of a class mapped to the held-out class.
    pub samples_before_registration: Option<usize>,
    /// Held-out samples streamed after that registration.
    pub held_out_after: usize,
    /// Share of those that received a label mapped to the held-out class.
    pub held_out_recall_after: f64,
    pub f1_before: BTreeMap<String, f64>,
    pub f1_after: BTreeMap<String, f64>,
    /// Largest F1 decrease over pre-existing classes (negative if all improved).
    pub max_f1_drop: f64,
    /// Predictions for the pre-existing classes' test samples, before and
    /// after the stream, with novel labels mapped to true classes.
    pub known_truth: Vec<String>,
    pub known_before: Vec<String>,
    pub known_after: Vec<String>,
    pub stream: Vec<StreamItem>,
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Holds `held_out` out of training, streams its test samples mixed with
/// the other classes' test samples through the live classifier, and
/// compares the known classes before and after any registration.
pub fn new_class_protocol(
    vectors: &[FeatureVector],
    held_out: &str,
    c_min: usize,
    cfg: &PipelineConfig,
) -> Result<NewClassReport> {
    let labels = labels_of(vectors)?;
    if !labels.iter().any(|l| l == held_out) {
        return Err(Error::ClassAbsent(held_out.to_string()));
    }
    let (train_all, test) = stratified_split(&labels, &cfg.split)?;
    let train: Vec<usize> = train_all.into_iter().filter(|&i| labels[i] != held_out).collect();
    let train_raw: Vec<FeatureVector> = train.iter().map(|&i| vectors[i].clone()).collect();
    let norm = fit_normalizer(&train_raw)?;
    let scaled: Vec<Vec<f64>> = vectors.iter().map(|v| norm.apply(&v.values)).collect::<Result<_>>()?;

    let train_x: Vec<Vec<f64>> = train.iter().map(|&i| scaled[i].clone()).collect();
    let train_y: Vec<String> = train.iter().map(|&i| labels[i].clone()).collect();
    let mut index = build_index(&train_x, &train_y, cfg.backend, cfg.leaf_size)?;
    let mut registry = ClassRegistry::from_index(&index);
    let calibration = crate::cbr::CalibrationConfig { c_min, ..cfg.calibration };
    let th = calibrate_thresholds(&train_x, &train_y, &calibration)?;

    let mut known_classes = train_y.clone();
    known_classes.sort();
    known_classes.dedup();
    let known_test: Vec<usize> = test.iter().copied().filter(|&i| labels[i] != held_out).collect();
    let known_x: Vec<Vec<f64>> = known_test.iter().map(|&i| scaled[i].clone()).collect();
    let known_truth: Vec<String> = known_test.iter().map(|&i| labels[i].clone()).collect();
    let known_before = open_set_predict(&index, &known_x, &th)?;

    let mut order = test.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.split.seed ^ 0x5eed));
    let mut raw_stream = Vec::with_capacity(order.len());
    for &i in &order {
        let v = classify(&mut index, &mut registry, &scaled[i], &th)?;
        raw_stream.push((i, v));
    }

    // Map each registered label to the majority true class of its founders.
    let truth_by_vector: HashMap<Vec<u64>, &str> =
        order.iter().map(|&i| (bits(&scaled[i]), labels[i].as_str())).collect();
    let mut registered = Vec::new();
    let mut mapping: HashMap<String, String> = HashMap::new();
    for label in registry.registered() {
        let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
        let mut founders = 0;
        for e in index.entries().iter().filter(|e| e.label == label) {
            founders += 1;
            if let Some(t) = truth_by_vector.get(&bits(&e.vector)) {
                *tally.entry(t).or_insert(0) += 1;
            }
        }
        let mapped_to =
            tally.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(t, _)| t.to_string()).unwrap_or_default();
        mapping.insert(label.to_string(), mapped_to.clone());
        registered.push(RegisteredClass { label: label.to_string(), mapped_to, founding_samples: founders });
    }
    let resolve = |l: &str| mapping.get(l).cloned().unwrap_or_else(|| l.to_string());

    let stream: Vec<StreamItem> = raw_stream
        .iter()
        .map(|(i, v)| StreamItem {
            true_label: labels[*i].clone(),
            kind: v.kind,
            label: v.label.as_deref().map(resolve),
        })
        .collect();
    let held_stream: Vec<&StreamItem> = stream.iter().filter(|s| s.true_label == held_out).collect();
    let trigger = held_stream
        .iter()
        .position(|s| s.kind == VerdictKind::NewClassRegistered && s.label.as_deref() == Some(held_out));
    let after: &[&StreamItem] = match trigger {
        Some(p) => &held_stream[p + 1..],
        None => &[],
    };
    let hits = after.iter().filter(|s| s.label.as_deref() == Some(held_out)).count();
    let held_out_recall_after = if after.is_empty() { 0.0 } else { hits as f64 / after.len() as f64 };

    let known_after: Vec<String> = open_set_predict(&index, &known_x, &th)?.iter().map(|l| resolve(l)).collect();
    let before = compute_metrics(&known_truth, &known_before, &known_classes)?;
    let after_m = compute_metrics(&known_truth, &known_after, &known_classes)?;
    let f1_of = |m: &super::Metrics| -> BTreeMap<String, f64> {
        known_classes.iter().map(|c| (c.clone(), m.class(c).map_or(0.0, |x| x.f1))).collect()
    };
    let f1_before = f1_of(&before);
    let f1_after = f1_of(&after_m);
    let max_f1_drop = known_classes.iter().map(|c| f1_before[c] - f1_after[c]).fold(f64::NEG_INFINITY, f64::max);

    Ok(NewClassReport {
        held_out: held_out.to_string(),
        thresholds: th,
        registered,
        samples_before_registration: trigger.map(|p| p + 1),
        held_out_after: after.len(),
        held_out_recall_after,
        f1_before,
        f1_after,
        max_f1_drop,
        known_truth,
        known_before,
        known_after,
        stream,
    })
}
