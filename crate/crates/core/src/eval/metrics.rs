use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Row and column order of `confusion`.
    pub classes: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    /// Mean F1 over classes with nonzero support.
    pub macro_f1: f64,
    /// `confusion[t][p]` counts samples of class `t` predicted as `p`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.class == name)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 with a confusion matrix. Classes are
/// `class_set` followed by any other label seen in either list, sorted.
pub fn compute_metrics(y_true: &[String], y_pred: &[String], class_set: &[String]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch { left: y_true.len(), right: y_pred.len() });
    }
    let mut classes: Vec<String> = Vec::new();
    for c in class_set {
        if !classes.contains(c) {
            classes.push(c.clone());
        }
    }
    let mut extra: Vec<&String> = y_true.iter().chain(y_pred).filter(|l| !classes.contains(l)).collect();
    extra.sort();
    extra.dedup();
    classes.extend(extra.into_iter().cloned());

    let pos = |l: &String| classes.iter().position(|c| c == l).expect("every label is a class");
    let n = classes.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for (t, p) in y_true.iter().zip(y_pred) {
        confusion[pos(t)][pos(p)] += 1;
    }

    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|i| {
            let tp = confusion[i][i];
            let support: usize = confusion[i].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[i]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { class: classes[i].clone(), precision, recall, f1, support }
        })
        .collect();
    let trace: usize = (0..n).map(|i| confusion[i][i]).sum();
    let supported: Vec<f64> = per_class.iter().filter(|c| c.support > 0).map(|c| c.f1).collect();
    let macro_f1 = if supported.is_empty() { 0.0 } else { supported.iter().sum::<f64>() / supported.len() as f64 };
    Ok(Metrics { classes, per_class, accuracy: ratio(trace, y_true.len()), macro_f1, confusion })
}

/// `class,precision,recall,f1`, one row per class.
pub fn write_metrics_csv<W: Write>(m: &Metrics, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["class", "precision", "recall", "f1"])?;
    for c in &m.per_class {
        w.write_record([c.class.clone(), c.precision.to_string(), c.recall.to_string(), c.f1.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
