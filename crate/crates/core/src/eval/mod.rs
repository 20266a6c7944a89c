//! Experiment harness: splits, metrics, synthetic flows, sweeps, the
//! new-class protocol and report writers.

mod metrics;
mod new_class;
mod pipeline;
mod split;
mod sweep;
pub mod synth;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

pub use metrics::{compute_metrics, write_metrics_csv, ClassMetrics, Metrics};
pub use new_class::{new_class_protocol, NewClassReport, RegisteredClass, StreamItem};
pub use pipeline::{
    build_index, ensemble_predict, evaluate, knn_predict, labels_of, ood_probes, open_set_predict, prepare,
    run_ann_benchmark, EvalReport, PipelineConfig, Prepared, OOD_LABEL, PENDING_LABEL,
};
pub use split::{stratified_split, train_count, SplitSpec};
pub use sweep::{packet_sweep, plateau, write_sweep_csv, SweepPoint, PLATEAU_EPSILON};
pub use synth::{synth_generate, ClassTemplate};

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> crate::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
