//! Exact nearest-neighbor store over feature vectors.
//!
//! Three interchangeable backends answer the same queries with identical
//! results: a linear scan, a kd-tree and a ball tree. Ties in distance are
//! broken by entry id so the backends agree bit for bit.

mod balltree;
mod bench;
mod heap;
mod kdtree;
mod snapshot;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use self::balltree::BallTree;
use self::heap::KnnHeap;
use self::kdtree::KdTree;
use crate::error::{Error, Result};

pub use self::bench::{benchmark_backend, read_benchmark_csv, write_benchmark_csv, BackendReport, BenchmarkReport};
pub use self::snapshot::{IndexSnapshot, SNAPSHOT_VERSION};

pub const DEFAULT_LEAF_SIZE: usize = 32;

/// Trees are rebuilt once insertions since the last build exceed this
/// fraction of the build size.
pub const REBUILD_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Brute,
    KdTree,
    BallTree,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Brute, Backend::KdTree, Backend::BallTree];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Brute => "brute",
            Backend::KdTree => "kdtree",
            Backend::BallTree => "balltree",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown backend {s:?} (brute, kdtree, balltree)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexConfig {
    pub backend: Backend,
    pub leaf_size: usize,
    pub dimension: usize,
}

impl IndexConfig {
    pub fn new(backend: Backend, dimension: usize) -> Self {
        IndexConfig { backend, leaf_size: DEFAULT_LEAF_SIZE, dimension }
    }

    pub fn validate(&self) -> Result<()> {
        if self.leaf_size == 0 {
            return Err(Error::invalid("leaf_size must be at least 1"));
        }
        if self.dimension == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: u64,
    pub label: String,
    pub vector: Vec<f64>,
}

impl IndexEntry {
    pub fn new(id: u64, label: impl Into<String>, vector: Vec<f64>) -> Self {
        IndexEntry { id, label: label.into(), vector }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub entry_id: u64,
    pub label: String,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub entry_count: usize,
    /// Seconds spent in the most recent (re)build.
    pub build_time: f64,
    pub bytes_estimate: usize,
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

#[derive(Debug, Clone)]
enum Tree {
    Flat,
    Kd(KdTree),
    Ball(BallTree),
}

#[derive(Debug, Clone)]
pub struct Index {
    config: IndexConfig,
    entries: Vec<IndexEntry>,
    positions: HashMap<u64, usize>,
    tree: Tree,
    built_size: usize,
    inserted_since_build: usize,
    build_time: f64,
}

impl Index {
    /// An empty index; entries arrive through [`Index::insert`].
    pub fn new(config: IndexConfig) -> Result<Self> {
        config.validate()?;
        Ok(Index {
            config,
            entries: Vec::new(),
            positions: HashMap::new(),
            tree: Tree::Flat,
            built_size: 0,
            inserted_since_build: 0,
            build_time: 0.0,
        })
    }

    pub fn build(entries: Vec<IndexEntry>, config: IndexConfig) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("cannot build an index from zero entries"));
        }
        let mut index = Index::new(config)?;
        for e in &entries {
            index.check_entry(e)?;
            if index.positions.insert(e.id, index.positions.len()).is_some() {
                return Err(Error::DuplicateId(e.id));
            }
        }
        index.entries = entries;
        index.rebuild();
        Ok(index)
    }

    fn check_entry(&self, e: &IndexEntry) -> Result<()> {
        if e.vector.len() != self.config.dimension {
            return Err(Error::DimensionMismatch { expected: self.config.dimension, actual: e.vector.len() });
        }
        if e.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("entry {} has a non-finite component", e.id)));
        }
        Ok(())
    }

    fn rebuild(&mut self) {
        let start = Instant::now();
        let leaf = self.config.leaf_size;
        self.tree = match self.config.backend {
            Backend::Brute => Tree::Flat,
            Backend::KdTree if !self.entries.is_empty() => Tree::Kd(KdTree::build(&self.entries, leaf)),
            Backend::BallTree if !self.entries.is_empty() => Tree::Ball(BallTree::build(&self.entries, leaf)),
            _ => Tree::Flat,
        };
        self.built_size = self.entries.len();
        self.inserted_since_build = 0;
        self.build_time = start.elapsed().as_secs_f64();
    }

    /// Adds one entry, visible to the next query. Tree backends place it in
    /// the nearest leaf and rebuild after enough growth.
    pub fn insert(&mut self, entry: IndexEntry) -> Result<()> {
        self.check_entry(&entry)?;
        if self.positions.contains_key(&entry.id) {
            return Err(Error::DuplicateId(entry.id));
        }
        let pos = self.entries.len();
        self.positions.insert(entry.id, pos);
        self.entries.push(entry);
        self.inserted_since_build += 1;

        let grown = self.inserted_since_build as f64 > REBUILD_FRACTION * self.built_size as f64;
        match &mut self.tree {
            _ if self.config.backend == Backend::Brute => {}
            Tree::Flat => self.rebuild(),
            _ if grown => self.rebuild(),
            Tree::Kd(t) => t.insert(&self.entries, pos),
            Tree::Ball(t) => t.insert(&self.entries, pos),
        }
        Ok(())
    }

    /// The `k` nearest entries, ascending by (distance, id). Returns every
    /// entry when `k` exceeds the index size.
    pub fn query_knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.len() != self.config.dimension {
            return Err(Error::DimensionMismatch { expected: self.config.dimension, actual: query.len() });
        }
        let mut heap = KnnHeap::new(k);
        match &self.tree {
            Tree::Flat => {
                for (pos, e) in self.entries.iter().enumerate() {
                    heap.offer(squared_euclidean(query, &e.vector), e.id, pos);
                }
            }
            Tree::Kd(t) => t.search(&self.entries, query, &mut heap),
            Tree::Ball(t) => t.search(&self.entries, query, &mut heap),
        }
        Ok(heap
            .into_sorted()
            .into_iter()
            .map(|c| Neighbor { entry_id: c.id, label: self.entries[c.pos].label.clone(), distance: c.d2.sqrt() })
            .collect())
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.config.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Option<&IndexEntry> {
        self.positions.get(&id).map(|&p| &self.entries[p])
    }

    /// Smallest id greater than every stored id.
    pub fn next_id(&self) -> u64 {
        self.entries.iter().map(|e| e.id + 1).max().unwrap_or(0)
    }

    /// Depth of the tree (0 for the brute backend).
    pub fn depth(&self) -> usize {
        match &self.tree {
            Tree::Flat => 0,
            Tree::Kd(t) => t.depth(),
            Tree::Ball(t) => t.depth(),
        }
    }

    /// Largest leaf population (the whole index for the brute backend).
    pub fn max_leaf_len(&self) -> usize {
        match &self.tree {
            Tree::Flat => self.entries.len(),
            Tree::Kd(t) => t.max_leaf_len(),
            Tree::Ball(t) => t.max_leaf_len(),
        }
    }

    pub fn stats(&self) -> IndexStats {
        let per_entry = self.config.dimension * 8 + 48;
        let labels: usize = self.entries.iter().map(|e| e.label.len()).sum();
        let tree = match &self.tree {
            Tree::Flat => 0,
            Tree::Kd(t) => t.bytes_estimate(),
            Tree::Ball(t) => t.bytes_estimate(),
        };
        IndexStats {
            entry_count: self.entries.len(),
            build_time: self.build_time,
            bytes_estimate: self.entries.len() * per_entry + labels + tree,
        }
    }

    pub fn snapshot(&self) -> IndexSnapshot {
        IndexSnapshot { format_version: SNAPSHOT_VERSION, config: self.config, entries: self.entries.clone() }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.snapshot().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        IndexSnapshot::load(path)?.into_index()
    }

    /// Loads a snapshot into a (possibly different) backend configuration;
    /// the stored dimension must match `config.dimension`.
    pub fn load_as(path: impl AsRef<Path>, config: IndexConfig) -> Result<Self> {
        let snap = IndexSnapshot::load(path)?;
        if snap.config.dimension != config.dimension {
            return Err(Error::DimensionMismatch { expected: config.dimension, actual: snap.config.dimension });
        }
        IndexSnapshot { config, ..snap }.into_index()
    }
}
