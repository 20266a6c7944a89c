//! Random-forest baseline and the two-stage ensemble that pairs it with
//! the retrieval classifier.

mod ensemble;
mod tree;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ensemble::{ensemble_classify, EnsembleSource, EnsembleVerdict};
pub use tree::{gini, DecisionTree, Node};

use crate::error::{Error, Result};
use tree::{argmax, TreeParams};

pub const FOREST_SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Unlimited when `None`.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `ceil(sqrt(d))` when `None`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, dimension: usize) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        if let Some(m) = self.features_per_split {
            if m < 1 || m > dimension {
                return Err(Error::invalid(format!("features_per_split {m} outside [1, {dimension}]")));
            }
        }
        Ok(())
    }

    pub fn features_for(&self, dimension: usize) -> usize {
        self.features_per_split.unwrap_or_else(|| (dimension as f64).sqrt().ceil() as usize).clamp(1, dimension.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub config: ForestConfig,
    /// Sorted; tree histograms are indexed by position in this list.
    pub classes: Vec<String>,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
    /// Out-of-bag accuracy, when bootstrapping left any sample out.
    pub oob_accuracy: Option<f64>,
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Training rows drawn for tree `tree`: `n` draws with replacement, or
/// `0..n` when bootstrapping is off.
pub fn bootstrap_rows(config: &ForestConfig, tree: usize, n: usize) -> Vec<usize> {
    if config.bootstrap {
        let mut rng = tree_rng(config.seed, tree);
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    }
}

pub fn train_forest(x: &[Vec<f64>], y: &[String], config: &ForestConfig) -> Result<Forest> {
    if x.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: bad.len() });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }
    config.validate(d)?;
    let classes: Vec<String> = y.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    let yi: Vec<usize> = y.iter().map(|l| classes.binary_search(l).unwrap_or(0)).collect();
    let params = TreeParams {
        n_classes: classes.len(),
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        features_per_split: config.features_for(d),
    };

    let n = x.len();
    let grown: Vec<(DecisionTree, Vec<usize>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let rows = bootstrap_rows(config, t, n);
            // Split draws continue on a stream distinct from the bootstrap's.
            let mut rng = tree_rng(config.seed, t);
            rng.set_word_pos(1 << 40);
            let tree = DecisionTree::fit(x, &yi, rows.clone(), &params, &mut rng);
            (tree, rows)
        })
        .collect();

    let oob_accuracy = config.bootstrap.then(|| oob(x, &yi, &grown, classes.len())).flatten();
    Ok(Forest {
        config: *config,
        classes,
        n_features: d,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        oob_accuracy,
    })
}

fn oob(x: &[Vec<f64>], y: &[usize], grown: &[(DecisionTree, Vec<usize>)], n_classes: usize) -> Option<f64> {
    let n = x.len();
    let mut votes = vec![vec![0usize; n_classes]; n];
    let mut in_bag = vec![false; n];
    for (tree, rows) in grown {
        in_bag.iter_mut().for_each(|b| *b = false);
        for &r in rows {
            in_bag[r] = true;
        }
        for i in (0..n).filter(|&i| !in_bag[i]) {
            votes[i][tree.predict_index(&x[i])] += 1;
        }
    }
    let scored: Vec<bool> =
        votes.iter().zip(y).filter(|(v, _)| v.iter().any(|&c| c > 0)).map(|(v, &t)| argmax(v) == t).collect();
    (!scored.is_empty()).then(|| scored.iter().filter(|&&ok| ok).count() as f64 / scored.len() as f64)
}

impl Forest {
    /// Per-class tree votes for `v`, in `classes` order.
    pub fn votes(&self, v: &[f64]) -> Result<Vec<usize>> {
        if v.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, actual: v.len() });
        }
        let mut votes = vec![0; self.classes.len()];
        for t in &self.trees {
            votes[t.predict_index(v)] += 1;
        }
        Ok(votes)
    }

    /// Majority label over trees and the fraction of trees voting for it.
    /// Ties go to the lexicographically smaller label.
    pub fn predict(&self, v: &[f64]) -> Result<(String, f64)> {
        let votes = self.votes(v)?;
        let best = argmax(&votes);
        Ok((self.classes[best].clone(), votes[best] as f64 / self.trees.len() as f64))
    }

    pub fn snapshot(&self) -> ForestSnapshot {
        ForestSnapshot {
            format_version: FOREST_SNAPSHOT_VERSION,
            config: self.config,
            classes: self.classes.clone(),
            n_features: self.n_features,
            oob_accuracy: self.oob_accuracy,
            trees: self.trees.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.snapshot())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let snap: ForestSnapshot = serde_json::from_reader(r).map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
        snap.into_forest()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSnapshot {
    pub format_version: u32,
    pub config: ForestConfig,
    pub classes: Vec<String>,
    pub n_features: usize,
    pub oob_accuracy: Option<f64>,
    pub trees: Vec<DecisionTree>,
}

impl ForestSnapshot {
    pub fn into_forest(self) -> Result<Forest> {
        if self.format_version != FOREST_SNAPSHOT_VERSION {
            return Err(Error::SnapshotVersion { expected: FOREST_SNAPSHOT_VERSION, found: self.format_version });
        }
        if self.trees.is_empty() || self.classes.len() < 2 {
            return Err(Error::CorruptSnapshot("forest needs trees and two or more classes".into()));
        }
        for t in &self.trees {
            check_tree(t, self.classes.len(), self.n_features)?;
        }
        Ok(Forest {
            config: self.config,
            classes: self.classes,
            n_features: self.n_features,
            trees: self.trees,
            oob_accuracy: self.oob_accuracy,
        })
    }
}

/// Rejects trees whose links or histograms would make prediction panic or loop.
fn check_tree(t: &DecisionTree, n_classes: usize, n_features: usize) -> Result<()> {
    let bad = |m: &str| Err(Error::CorruptSnapshot(m.to_string()));
    if t.nodes.is_empty() {
        return bad("empty tree");
    }
    for (i, node) in t.nodes.iter().enumerate() {
        match node {
            Node::Split { slot, left, right, .. } => {
                if *slot >= n_features || *left <= i || *right <= i || *left >= t.nodes.len() || *right >= t.nodes.len()
                {
                    return bad("split node has invalid links");
                }
            }
            Node::Leaf { counts } => {
                if counts.len() != n_classes || counts.iter().all(|&c| c == 0) {
                    return bad("leaf histogram is malformed");
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn blobs(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let centers = [[0.0, 0.0, 0.0], [3.0, 0.0, 1.0], [0.0, 3.0, -1.0]];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..n_per {
                x.push(center.iter().map(|m| m + noise.sample(&mut rng)).collect());
                y.push(format!("c{c}"));
            }
        }
        (x, y)
    }

    #[test]
    fn separable_training_accuracy() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![f64::from(i)]).collect();
        let y: Vec<String> = (0..20).map(|i| if i < 10 { "lo" } else { "hi" }.to_string()).collect();
        let f = train_forest(&x, &y, &ForestConfig { n_trees: 10, ..Default::default() }).unwrap();
        for (v, l) in x.iter().zip(&y) {
            assert_eq!(&f.predict(v).unwrap().0, l);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, y) = blobs(30, 1);
        let cfg = ForestConfig { n_trees: 8, seed: 42, ..Default::default() };
        let a = train_forest(&x, &y, &cfg).unwrap();
        let b = train_forest(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_forest(&x, &y, &ForestConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn unanimous_vote_fraction() {
        let x = vec![vec![0.0], vec![0.1], vec![5.0], vec![5.1]];
        let y = labels(&["a", "a", "b", "b"]);
        let f = train_forest(&x, &y, &ForestConfig { n_trees: 5, bootstrap: false, ..Default::default() }).unwrap();
        assert_eq!(f.predict(&[0.05]).unwrap(), ("a".to_string(), 1.0));
        assert_eq!(f.oob_accuracy, None);
    }

    #[test]
    fn errors() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            train_forest(&x, &labels(&["a", "a"]), &ForestConfig::default()),
            Err(Error::TooFewClasses(1))
        ));
        assert!(matches!(train_forest(&[], &[], &ForestConfig::default()), Err(Error::EmptyInput(_))));
        let y = labels(&["a", "b"]);
        assert!(train_forest(&x, &y, &ForestConfig { n_trees: 0, ..Default::default() }).is_err());
        assert!(train_forest(&x, &y, &ForestConfig { features_per_split: Some(2), ..Default::default() }).is_err());
        let f = train_forest(&x, &y, &ForestConfig { n_trees: 2, ..Default::default() }).unwrap();
        assert!(matches!(f.predict(&[1.0, 2.0]), Err(Error::DimensionMismatch { expected: 1, actual: 2 })));
    }

    #[test]
    fn default_features_per_split() {
        let c = ForestConfig::default();
        assert_eq!(c.features_for(183), 14);
        assert_eq!(c.features_for(1), 1);
        assert_eq!(c.features_for(16), 4);
    }

    #[test]
    fn tree_invariants() {
        let (x, y) = blobs(40, 2);
        let f = train_forest(&x, &y, &ForestConfig { n_trees: 6, ..Default::default() }).unwrap();
        for t in &f.trees {
            check_tree(t, 3, 3).unwrap();
            for node in &t.nodes {
                if let Node::Split { left, right, .. } = node {
                    // a split must strictly lower weighted impurity
                    let (l, r) = (subtree_counts(t, *left), subtree_counts(t, *right));
                    let parent: Vec<usize> = l.iter().zip(&r).map(|(a, b)| a + b).collect();
                    let nl = l.iter().sum::<usize>() as f64;
                    let nr = r.iter().sum::<usize>() as f64;
                    let weighted = (nl * gini(&l) + nr * gini(&r)) / (nl + nr);
                    assert!(weighted < gini(&parent));
                }
            }
        }
    }

    fn subtree_counts(t: &DecisionTree, at: usize) -> Vec<usize> {
        match &t.nodes[at] {
            Node::Leaf { counts } => counts.clone(),
            Node::Split { left, right, .. } => {
                subtree_counts(t, *left).iter().zip(subtree_counts(t, *right)).map(|(a, b)| a + b).collect()
            }
        }
    }

    #[test]
    fn votes_match_per_tree_reevaluation() {
        let (x, y) = blobs(25, 3);
        let f = train_forest(&x, &y, &ForestConfig { n_trees: 15, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..6.0)).collect();
            let mut recount = vec![0; 3];
            for t in &f.trees {
                // walk by hand, then take the leaf majority with low-index ties
                let mut at = 0;
                let counts = loop {
                    match &t.nodes[at] {
                        Node::Split { slot, value, left, right } => {
                            at = if q[*slot] <= *value { *left } else { *right }
                        }
                        Node::Leaf { counts } => break counts,
                    }
                };
                let top = *counts.iter().max().unwrap();
                recount[counts.iter().position(|&c| c == top).unwrap()] += 1;
            }
            assert_eq!(f.votes(&q).unwrap(), recount);
            let (label, frac) = f.predict(&q).unwrap();
            let top = *recount.iter().max().unwrap();
            assert_eq!(label, f.classes[recount.iter().position(|&c| c == top).unwrap()]);
            assert_eq!(frac, top as f64 / 15.0);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let (x, y) = blobs(30, 5);
        let f = train_forest(&x, &y, &ForestConfig { n_trees: 7, seed: 9, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forest.json");
        f.save(&path).unwrap();
        let g = Forest::load(&path).unwrap();
        assert_eq!(f, g);

        let mut snap = f.snapshot();
        snap.format_version = 7;
        std::fs::write(&path, serde_json::to_vec(&snap).unwrap()).unwrap();
        assert!(matches!(Forest::load(&path), Err(Error::SnapshotVersion { found: 7, .. })));

        let mut snap = f.snapshot();
        snap.trees[0].nodes[0] = Node::Split { slot: 0, value: 0.0, left: 0, right: 0 };
        std::fs::write(&path, serde_json::to_vec(&snap).unwrap()).unwrap();
        assert!(matches!(Forest::load(&path), Err(Error::CorruptSnapshot(_))));
    }
}
