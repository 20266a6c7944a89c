//! CART decision trees with Gini splits.
//!
//! Split quality is compared exactly. For a partition with per-class
//! counts `l` and `r`, minimizing weighted Gini impurity is the same as
//! maximizing `sum(l^2)/|l| + sum(r^2)/|r|`, which is held as an integer
//! fraction so ties are real ties and tiny spurious gains cannot occur.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Samples with `x[slot] <= value` go left.
    Split { slot: usize, value: f64, left: usize, right: usize },
    /// Class-count histogram of the training samples that reached the leaf.
    Leaf { counts: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

/// `num / den`, compared exactly.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    /// Purity of a single node: `sum(c^2) / n`.
    pub(crate) fn node(counts: &[usize]) -> Self {
        let n: usize = counts.iter().sum();
        Purity { num: sq_sum(counts), den: n.max(1) as u128 }
    }

    /// Purity of a two-way partition.
    pub(crate) fn split(left: &[usize], right: &[usize]) -> Self {
        let nl = left.iter().sum::<usize>() as u128;
        let nr = right.iter().sum::<usize>() as u128;
        Purity { num: sq_sum(left) * nr + sq_sum(right) * nl, den: nl * nr }
    }

    pub(crate) fn cmp(&self, other: &Purity) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn sq_sum(counts: &[usize]) -> u128 {
    counts.iter().map(|&c| (c as u128) * (c as u128)).sum()
}

/// Gini impurity `1 - sum(p^2)`; 0 for a pure or empty node.
pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Threshold between two distinct sorted values, guaranteed to separate them.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Index of the largest count; ties go to the smallest index.
pub(crate) fn argmax(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct TreeParams {
    pub n_classes: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
}

struct Builder<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    params: &'a TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    slots: Vec<usize>,
}

impl DecisionTree {
    /// Grows a tree over the samples `rows` (duplicates allowed, as produced
    /// by bootstrapping). At every node `features_per_split` slots are
    /// drawn at random and examined in ascending order; when none of them
    /// admits a split, further slots are drawn until one does or all are
    /// exhausted.
    pub(crate) fn fit<R: Rng>(x: &[Vec<f64>], y: &[usize], rows: Vec<usize>, params: &TreeParams, rng: &mut R) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let mut b = Builder { x, y, params, rng, nodes: Vec::new(), slots: (0..d).collect() };
        b.grow(rows, 0);
        DecisionTree { nodes: b.nodes }
    }

    pub fn leaf_counts(&self, v: &[f64]) -> &[usize] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { slot, value, left, right } => {
                    at = if v[*slot] <= *value { *left } else { *right };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Class index of the leaf majority reached by `v`.
    pub fn predict_index(&self, v: &[f64]) -> usize {
        argmax(self.leaf_counts(v))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

impl<R: Rng> Builder<'_, R> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.params.n_classes];
        for &r in rows {
            c[self.y[r]] += 1;
        }
        c
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });

        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let deep = self.params.max_depth.is_some_and(|m| depth >= m);
        if pure || deep || rows.len() < 2 * self.params.min_samples_leaf {
            return at;
        }
        let Some((slot, value)) = self.best_split(&rows, &counts) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.x[i][slot] <= value);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split { slot, value, left, right };
        at
    }

    fn best_split(&mut self, rows: &[usize], parent: &[usize]) -> Option<(usize, f64)> {
        let d = self.slots.len();
        let m = self.params.features_per_split.clamp(1, d.max(1));
        self.slots.shuffle(self.rng);
        let parent_purity = Purity::node(parent);

        let mut best: Option<(Purity, usize, f64)> = None;
        let mut start = 0;
        let mut batch = m;
        while start < d {
            let end = (start + batch).min(d);
            let mut drawn = self.slots[start..end].to_vec();
            drawn.sort_unstable();
            let mut valid = false;
            for slot in drawn {
                if let Some((p, value)) = best_threshold(self.x, self.y, rows, slot, self.params) {
                    valid = true;
                    if best.as_ref().is_none_or(|(b, _, _)| p.cmp(b) == Ordering::Greater) {
                        best = Some((p, slot, value));
                    }
                }
            }
            if valid {
                break;
            }
            start = end;
            batch = 1;
        }
        best.filter(|(p, _, _)| p.cmp(&parent_purity) == Ordering::Greater).map(|(_, slot, value)| (slot, value))
    }
}

/// Best threshold on one slot, scanning distinct values in ascending
/// order; `None` if the slot is constant over `rows` or no threshold
/// leaves `min_samples_leaf` on both sides.
fn best_threshold(
    x: &[Vec<f64>],
    y: &[usize],
    rows: &[usize],
    slot: usize,
    params: &TreeParams,
) -> Option<(Purity, f64)> {
    let mut order: Vec<(f64, usize)> = rows.iter().map(|&i| (x[i][slot], y[i])).collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let n = order.len();
    let mut right = vec![0usize; params.n_classes];
    for &(_, c) in &order {
        right[c] += 1;
    }
    let mut left = vec![0usize; params.n_classes];
    let mut best: Option<(Purity, f64)> = None;
    for i in 0..n - 1 {
        let c = order[i].1;
        left[c] += 1;
        right[c] -= 1;
        if order[i].0 == order[i + 1].0 {
            continue;
        }
        let nl = i + 1;
        if nl < params.min_samples_leaf || n - nl < params.min_samples_leaf {
            continue;
        }
        let p = Purity::split(&left, &right);
        if best.as_ref().is_none_or(|(b, _)| p.cmp(b) == Ordering::Greater) {
            best = Some((p, midpoint(order[i].0, order[i + 1].0)));
        }
    }
    best
}
