//! Filter-based ranking of feature slots and minimal-subset selection.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Stands in for an infinite F statistic (zero within-class spread with
/// nonzero between-class spread). Finite so it survives JSON and sorting.
pub const SEPARATION_SENTINEL: f64 = f64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub slot: usize,
    pub score: f64,
    /// 1-based position in descending score order.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// One-way ANOVA F statistic.
    #[default]
    AnovaF,
    /// Mutual information between a 10-bin discretization and the label.
    MutualInformation,
}

/// Ordered list of kept slots, most informative first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub schema_version: String,
    pub slots: Vec<usize>,
}

impl SelectionMask {
    pub fn new(schema_version: impl Into<String>, slots: Vec<usize>, width: usize) -> Result<Self> {
        let m = SelectionMask { schema_version: schema_version.into(), slots };
        m.validate(width)?;
        Ok(m)
    }

    pub fn identity(schema_version: impl Into<String>, width: usize) -> Self {
        SelectionMask { schema_version: schema_version.into(), slots: (0..width).collect() }
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for &s in &self.slots {
            if s >= width {
                return Err(Error::invalid(format!("mask slot {s} out of range 0..{width}")));
            }
            if !seen.insert(s) {
                return Err(Error::invalid(format!("mask slot {s} repeated")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Schema identifier carried by vectors projected through this mask.
    pub fn output_version(&self) -> String {
        // FNV-1a over the slot list
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &s in &self.slots {
            for b in (s as u64).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{}/mask{}-{h:016x}", self.schema_version, self.slots.len())
    }

    /// The single mask equivalent to applying `self` and then `inner`.
    pub fn compose(&self, inner: &SelectionMask) -> Result<SelectionMask> {
        if inner.schema_version != self.output_version() {
            return Err(Error::SchemaMismatch {
                expected: self.output_version(),
                actual: inner.schema_version.clone(),
            });
        }
        inner.validate(self.slots.len())?;
        Ok(SelectionMask {
            schema_version: self.schema_version.clone(),
            slots: inner.slots.iter().map(|&i| self.slots[i]).collect(),
        })
    }

    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        self.slots.iter().map(|&s| values[s]).collect()
    }
}

pub fn apply_mask(v: &FeatureVector, mask: &SelectionMask) -> Result<FeatureVector> {
    if v.schema_version != mask.schema_version {
        return Err(Error::SchemaMismatch { expected: mask.schema_version.clone(), actual: v.schema_version.clone() });
    }
    mask.validate(v.len())?;
    Ok(FeatureVector {
        values: mask.project(&v.values),
        schema_version: mask.output_version(),
        flow_ref: v.flow_ref.clone(),
        label: v.label.clone(),
    })
}

/// Groups row indices by label, in label order.
fn class_members(labels: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        m.entry(l.as_str()).or_default().push(i);
    }
    m
}

fn anova_f(column: &[f64], classes: &[Vec<usize>]) -> f64 {
    let n = column.len() as f64;
    let k = classes.len() as f64;
    if column.iter().all(|&x| x == column[0]) {
        return 0.0;
    }
    let grand = column.iter().sum::<f64>() / n;
    let mut between = 0.0;
    let mut within = 0.0;
    for members in classes {
        let first = column[members[0]];
        let mean = members.iter().map(|&i| column[i]).sum::<f64>() / members.len() as f64;
        between += members.len() as f64 * (mean - grand) * (mean - grand);
        if members.iter().any(|&i| column[i] != first) {
            within += members.iter().map(|&i| (column[i] - mean) * (column[i] - mean)).sum::<f64>();
        }
    }
    if between <= 0.0 {
        return 0.0;
    }
    if within <= 0.0 {
        return SEPARATION_SENTINEL;
    }
    let f = (between / (k - 1.0)) / (within / (n - k));
    if f.is_finite() {
        f
    } else {
        SEPARATION_SENTINEL
    }
}

fn mutual_information(column: &[f64], classes: &[Vec<usize>]) -> f64 {
    const BINS: usize = 10;
    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return 0.0;
    }
    let bin = |x: f64| (((x - lo) / (hi - lo)) * BINS as f64).floor().min(BINS as f64 - 1.0) as usize;
    let n = column.len() as f64;
    let mut marginal = [0.0; BINS];
    for &x in column {
        marginal[bin(x)] += 1.0;
    }
    let mut mi = 0.0;
    for members in classes {
        let pc = members.len() as f64 / n;
        let mut joint = [0.0; BINS];
        for &i in members {
            joint[bin(column[i])] += 1.0;
        }
        for b in 0..BINS {
            if joint[b] > 0.0 {
                let pxy = joint[b] / n;
                mi += pxy * (pxy / (pc * marginal[b] / n)).ln();
            }
        }
    }
    mi.max(0.0)
}

pub fn score_features(rows: &[Vec<f64>], labels: &[String]) -> Result<Vec<FeatureScore>> {
    score_features_with(rows, labels, Scorer::AnovaF)
}

/// Scores every slot and returns the scores in rank order (best first,
/// ties broken by slot index).
pub fn score_features_with(rows: &[Vec<f64>], labels: &[String], scorer: Scorer) -> Result<Vec<FeatureScore>> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch { left: rows.len(), right: labels.len() });
    }
    let width = rows.first().ok_or(Error::EmptyInput("no rows to score"))?.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::DimensionMismatch { expected: width, actual: bad.len() });
    }
    let classes: Vec<Vec<usize>> = class_members(labels).into_values().collect();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    if classes.iter().any(|c| c.len() < 2) {
        return Err(Error::invalid("every class needs at least two samples to score features"));
    }

    let scores: Vec<f64> = (0..width)
        .into_par_iter()
        .map(|slot| {
            let column: Vec<f64> = rows.iter().map(|r| r[slot]).collect();
            match scorer {
                Scorer::AnovaF => anova_f(&column, &classes),
                Scorer::MutualInformation => mutual_information(&column, &classes),
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order.into_iter().enumerate().map(|(i, slot)| FeatureScore { slot, score: scores[slot], rank: i + 1 }).collect())
}

pub fn write_scores_csv<W: Write>(scores: &[FeatureScore], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["slot", "score", "rank"])?;
    for s in scores {
        w.write_record([s.slot.to_string(), s.score.to_string(), s.rank.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Slot-count grid: 1, 2, 4, ... and finally `width`.
fn doubling_grid(width: usize) -> Vec<usize> {
    let mut grid = Vec::new();
    let mut m = 1;
    while m < width {
        grid.push(m);
        m *= 2;
    }
    grid.push(width);
    grid
}

/// Finds the shortest prefix of `ranking` whose accuracy stays within
/// `tolerance` of the best accuracy seen.
///
/// Accuracy is evaluated on a doubling grid of prefix lengths, then the gap
/// between the first acceptable grid point and its predecessor is bisected.
pub fn select_by_ranking<F>(
    ranking: &[usize],
    schema_version: &str,
    tolerance: f64,
    mut eval: F,
) -> Result<SelectionMask>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    if ranking.is_empty() {
        return Err(Error::EmptyInput("empty ranking"));
    }
    let mut cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut accuracy = |m: usize, cache: &mut BTreeMap<usize, f64>| -> Result<f64> {
        if let Some(&a) = cache.get(&m) {
            return Ok(a);
        }
        let a = eval(&ranking[..m])?;
        cache.insert(m, a);
        Ok(a)
    };

    let grid = doubling_grid(ranking.len());
    for &m in &grid {
        accuracy(m, &mut cache)?;
    }
    let mut best = cache.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let pos = grid.iter().position(|m| cache[m] >= best - tolerance).expect("the best grid point always qualifies");
    let mut hi = grid[pos];
    let mut lo = if pos == 0 { 0 } else { grid[pos - 1] };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let a = accuracy(mid, &mut cache)?;
        best = best.max(a);
        if a >= best - tolerance {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SelectionMask { schema_version: schema_version.to_string(), slots: ranking[..hi].to_vec() })
}

/// Ranks slots with the ANOVA F filter, then picks the minimal prefix via
/// [`select_by_ranking`].
pub fn select_minimal<F>(
    rows: &[Vec<f64>],
    labels: &[String],
    schema_version: &str,
    tolerance: f64,
    eval: F,
) -> Result<SelectionMask>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    let ranking: Vec<usize> = score_features(rows, labels)?.iter().map(|s| s.slot).collect();
    select_by_ranking(&ranking, schema_version, tolerance, eval)
}
