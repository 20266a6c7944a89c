//! Classification by retrieval: k-NN majority vote with distance-based
//! rejection and few-shot registration of new classes.
//!
//! A query's nearest-neighbor distance `d1` decides its fate:
//!
//! * `d1 <= theta_new`: a known class, chosen by majority vote over the
//!   `k` nearest entries;
//! * `d1 > theta_ood`: out of distribution, dropped;
//! * in between: buffered as a candidate. Once `c_min` buffered
//!   candidates lie pairwise within `r_cohesion` of each other they found
//!   a new class, which is inserted into the index immediately.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{euclidean, squared_euclidean, Index, IndexEntry, Neighbor};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_C_MIN: usize = 5;
pub const CANDIDATE_CAPACITY: usize = 1000;
/// Lower bound on calibrated thresholds, so they stay strictly positive.
pub const THRESHOLD_FLOOR: f64 = 1e-9;
pub const NOVEL_PREFIX: &str = "novel-";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub k: usize,
    pub theta_new: f64,
    pub theta_ood: f64,
    pub c_min: usize,
    pub r_cohesion: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.theta_new > 0.0 && self.theta_new <= self.theta_ood && self.theta_ood.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < theta_new <= theta_ood, got {} and {}",
                self.theta_new, self.theta_ood
            )));
        }
        if self.c_min < 1 {
            return Err(Error::invalid("c_min must be at least 1"));
        }
        if !(self.r_cohesion > 0.0) {
            return Err(Error::invalid("r_cohesion must be positive"));
        }
        Ok(())
    }

    /// Thresholds that never reject: every query is a known class.
    pub fn closed_set(k: usize) -> Self {
        Thresholds { k, theta_new: f64::MAX, theta_ood: f64::MAX, c_min: DEFAULT_C_MIN, r_cohesion: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Known,
    NewClassPending,
    NewClassRegistered,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    /// Set for `Known` and `NewClassRegistered`.
    pub label: Option<String>,
    /// Label hit counts among the `k` nearest neighbors.
    pub votes: BTreeMap<String, usize>,
    pub min_distance: f64,
}

/// One line of a verdict stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub flow_id: String,
    pub kind: VerdictKind,
    pub label: Option<String>,
    pub min_distance: f64,
    pub votes: BTreeMap<String, usize>,
}

impl VerdictRecord {
    pub fn new(flow_id: impl Into<String>, v: &Verdict) -> Self {
        VerdictRecord {
            flow_id: flow_id.into(),
            kind: v.kind,
            label: v.label.clone(),
            min_distance: v.min_distance,
            votes: v.votes.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrigin {
    Trained,
    Registered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub origin: ClassOrigin,
    /// Samples the class was created from (0 for trained classes).
    pub founding_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub vector: Vec<f64>,
    /// Logical arrival time (a per-registry counter).
    pub seen_at: u64,
}

/// Known labels plus the buffer of new-class candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRegistry {
    pub classes: BTreeMap<String, ClassRecord>,
    pub pending: VecDeque<Candidate>,
    pub capacity: usize,
    next_novel: u64,
    clock: u64,
}

impl Default for ClassRegistry {
    fn default() -> Self {
        ClassRegistry {
            classes: BTreeMap::new(),
            pending: VecDeque::new(),
            capacity: CANDIDATE_CAPACITY,
            next_novel: 1,
            clock: 0,
        }
    }
}

impl ClassRegistry {
    /// Registry whose classes are the labels present in `index`.
    pub fn from_index(index: &Index) -> Self {
        let mut r = ClassRegistry::default();
        for e in index.entries() {
            r.classes
                .entry(e.label.clone())
                .or_insert(ClassRecord { origin: ClassOrigin::Trained, founding_samples: 0 });
        }
        r
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        serde_json::from_reader(r).map_err(|e| Error::CorruptSnapshot(e.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.classes.contains_key(label)
    }

    pub fn registered(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().filter(|(_, c)| c.origin == ClassOrigin::Registered).map(|(l, _)| l.as_str())
    }

    fn buffer(&mut self, vector: Vec<f64>) {
        if self.pending.len() >= self.capacity {
            self.pending.pop_front();
        }
        self.clock += 1;
        self.pending.push_back(Candidate { vector, seen_at: self.clock });
    }

    fn fresh_label(&mut self) -> String {
        loop {
            let label = format!("{NOVEL_PREFIX}{}", self.next_novel);
            self.next_novel += 1;
            if !self.classes.contains_key(&label) {
                return label;
            }
        }
    }

    /// Greedy cohesive group around the newest candidate: candidates sorted
    /// by distance to it, each admitted if within `radius` of every member
    /// so far. Returns buffer positions.
    fn cohesive_group(&self, radius: f64) -> Vec<usize> {
        let Some(newest) = self.pending.back() else {
            return Vec::new();
        };
        let r2 = radius * radius;
        let mut near: Vec<(f64, u64, usize)> = self
            .pending
            .iter()
            .enumerate()
            .map(|(i, c)| (squared_euclidean(&newest.vector, &c.vector), c.seen_at, i))
            .filter(|(d2, _, _)| *d2 <= r2)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut group: Vec<usize> = Vec::new();
        for (_, _, i) in near {
            let v = &self.pending[i].vector;
            if group.iter().all(|&j| squared_euclidean(v, &self.pending[j].vector) <= r2) {
                group.push(i);
            }
        }
        group
    }
}

/// Majority label among `neighbors`. Ties go to the smaller summed
/// distance, then to the lexicographically smaller label.
pub fn vote(neighbors: &[Neighbor]) -> Option<(String, usize)> {
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for n in neighbors {
        let t = tally.entry(n.label.as_str()).or_insert((0, 0.0));
        t.0 += 1;
        t.1 += n.distance;
    }
    // BTreeMap iterates labels in order, so `min_by` keeps the first on full ties.
    tally
        .into_iter()
        .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.total_cmp(&b.1 .1)))
        .map(|(label, (hits, _))| (label.to_string(), hits))
}

fn tally(neighbors: &[Neighbor]) -> BTreeMap<String, usize> {
    let mut votes = BTreeMap::new();
    for n in neighbors {
        *votes.entry(n.label.clone()).or_insert(0) += 1;
    }
    votes
}

/// Classifies without touching any state: the middle band reports
/// `NewClassPending` but nothing is buffered.
pub fn assess(index: &Index, query: &[f64], th: &Thresholds) -> Result<Verdict> {
    let neighbors = index.query_knn(query, th.k)?;
    let d1 = neighbors[0].distance;
    let votes = tally(&neighbors);
    let (kind, label) = if d1 <= th.theta_new {
        (VerdictKind::Known, vote(&neighbors).map(|(l, _)| l))
    } else if d1 > th.theta_ood {
        (VerdictKind::Ood, None)
    } else {
        (VerdictKind::NewClassPending, None)
    };
    Ok(Verdict { kind, label, votes, min_distance: d1 })
}

/// Classifies `query`, buffering middle-band queries and registering a
/// new class once enough cohesive candidates have accumulated.
pub fn classify(index: &mut Index, registry: &mut ClassRegistry, query: &[f64], th: &Thresholds) -> Result<Verdict> {
    let mut verdict = assess(index, query, th)?;
    if verdict.kind != VerdictKind::NewClassPending {
        return Ok(verdict);
    }
    registry.buffer(query.to_vec());
    let group = registry.cohesive_group(th.r_cohesion);
    if group.len() < th.c_min {
        return Ok(verdict);
    }

    let label = registry.fresh_label();
    let mut positions = group;
    positions.sort_unstable_by(|a, b| b.cmp(a));
    let mut founders: Vec<Candidate> = positions.into_iter().filter_map(|i| registry.pending.remove(i)).collect();
    founders.sort_by_key(|c| c.seen_at);
    for (id, c) in (index.next_id()..).zip(&founders) {
        index.insert(IndexEntry::new(id, label.clone(), c.vector.clone()))?;
    }
    registry
        .classes
        .insert(label.clone(), ClassRecord { origin: ClassOrigin::Registered, founding_samples: founders.len() });
    verdict.kind = VerdictKind::NewClassRegistered;
    verdict.label = Some(label);
    Ok(verdict)
}

/// Inserts a labeled sample; unseen labels join the registry as
/// registered classes. Returns the new entry id.
pub fn add_labeled_sample(
    index: &mut Index,
    registry: &mut ClassRegistry,
    vector: Vec<f64>,
    label: &str,
) -> Result<u64> {
    let id = index.next_id();
    index.insert(IndexEntry::new(id, label, vector))?;
    let record = registry
        .classes
        .entry(label.to_string())
        .or_insert(ClassRecord { origin: ClassOrigin::Registered, founding_samples: 0 });
    if record.origin == ClassOrigin::Registered {
        record.founding_samples += 1;
    }
    Ok(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub quantile_new: f64,
    pub quantile_ood: f64,
    pub ood_margin: f64,
    pub k: usize,
    pub c_min: usize,
    /// Defaults to the calibrated `theta_ood` when unset.
    pub r_cohesion: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            quantile_new: 0.99,
            quantile_ood: 0.999,
            ood_margin: 1.5,
            k: DEFAULT_K,
            c_min: DEFAULT_C_MIN,
            r_cohesion: None,
        }
    }
}

/// Linear-interpolated quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Leave-one-out distance from each sample to its nearest same-class
/// sample. Classes with a single sample are skipped with a warning.
pub fn same_class_nn_distances(vectors: &[Vec<f64>], labels: &[String]) -> Result<Vec<f64>> {
    if vectors.len() != labels.len() {
        return Err(Error::LengthMismatch { left: vectors.len(), right: labels.len() });
    }
    let mut classes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        classes.entry(l.as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (label, members) in classes {
        if members.len() < 2 {
            warn!("class {label:?} has a single sample; excluded from calibration");
            continue;
        }
        let dists: Vec<f64> = members
            .par_iter()
            .map(|&i| {
                members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| euclidean(&vectors[i], &vectors[j]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        out.extend(dists);
    }
    if out.is_empty() {
        return Err(Error::invalid("no class has two or more samples to calibrate from"));
    }
    Ok(out)
}

pub fn calibrate_thresholds(vectors: &[Vec<f64>], labels: &[String], cfg: &CalibrationConfig) -> Result<Thresholds> {
    for q in [cfg.quantile_new, cfg.quantile_ood] {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
        }
    }
    if !(cfg.ood_margin >= 1.0) {
        return Err(Error::invalid("ood_margin must be at least 1"));
    }
    let mut d = same_class_nn_distances(vectors, labels)?;
    d.sort_by(f64::total_cmp);
    let theta_new = quantile(&d, cfg.quantile_new).max(THRESHOLD_FLOOR);
    let theta_ood = (quantile(&d, cfg.quantile_ood) * cfg.ood_margin).max(theta_new);
    let th = Thresholds {
        k: cfg.k,
        theta_new,
        theta_ood,
        c_min: cfg.c_min,
        r_cohesion: cfg.r_cohesion.unwrap_or(theta_ood),
    };
    th.validate()?;
    Ok(th)
}
