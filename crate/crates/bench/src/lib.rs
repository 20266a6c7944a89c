//! Fixtures shared by the criterion benches.

use flowcbr_core::eval::synth::standard_templates;
use flowcbr_core::eval::synth_generate;
use flowcbr_core::index::IndexConfig;
use flowcbr_core::{Backend, Flow, Index, IndexEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` uniform points in the unit cube, labeled round-robin over five classes.
pub fn uniform_entries(n: usize, dimension: usize, seed: u64) -> Vec<IndexEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|i| IndexEntry::new(i, format!("c{}", i % 5), (0..dimension).map(|_| rng.random::<f64>()).collect()))
        .collect()
}

pub fn uniform_queries(n: usize, dimension: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    (0..n).map(|_| (0..dimension).map(|_| rng.random::<f64>()).collect()).collect()
}

pub fn build(entries: &[IndexEntry], backend: Backend, leaf_size: usize) -> Index {
    let dimension = entries.first().map_or(0, |e| e.vector.len());
    Index::build(entries.to_vec(), IndexConfig { backend, leaf_size, dimension }).expect("valid benchmark index")
}

/// Labeled flows from the five standard synthetic classes.
pub fn standard_flows(per_class: usize, seed: u64) -> Vec<Flow> {
    synth_generate(&standard_templates(), per_class, seed).expect("standard templates are valid")
}
