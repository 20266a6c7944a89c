//! kd-tree: splits on the widest dimension at the median. Each node keeps
//! its axis-aligned bounding box, which gives the pruning bound.

use super::heap::KnnHeap;
use super::{squared_euclidean, IndexEntry};

#[derive(Debug, Clone)]
enum Kind {
    Leaf(Vec<usize>),
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    kind: Kind,
}

#[derive(Debug, Clone)]
pub(crate) struct KdTree {
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(entries: &[IndexEntry], leaf_size: usize) -> Self {
        let mut tree = KdTree { nodes: Vec::new() };
        let positions: Vec<usize> = (0..entries.len()).collect();
        tree.build_node(entries, positions, leaf_size);
        tree
    }

    fn build_node(&mut self, entries: &[IndexEntry], mut positions: Vec<usize>, leaf_size: usize) -> usize {
        let d = entries[positions[0]].vector.len();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &p in &positions {
            for (i, &x) in entries[p].vector.iter().enumerate() {
                lo[i] = lo[i].min(x);
                hi[i] = hi[i].max(x);
            }
        }
        let (dim, spread) =
            (0..d)
                .map(|i| (i, hi[i] - lo[i]))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });

        let id = self.nodes.len();
        if positions.len() <= leaf_size || spread <= 0.0 {
            self.nodes.push(Node { lo, hi, kind: Kind::Leaf(positions) });
            return id;
        }
        self.nodes.push(Node { lo, hi, kind: Kind::Leaf(Vec::new()) });

        let mid = positions.len() / 2;
        positions.select_nth_unstable_by(mid, |&a, &b| {
            entries[a].vector[dim].total_cmp(&entries[b].vector[dim]).then(entries[a].id.cmp(&entries[b].id))
        });
        let value = entries[positions[mid]].vector[dim];
        let right_half = positions.split_off(mid);
        let left = self.build_node(entries, positions, leaf_size);
        let right = self.build_node(entries, right_half, leaf_size);
        self.nodes[id].kind = Kind::Split { dim, value, left, right };
        id
    }

    /// Squared distance from `q` to the node's box; never exceeds the
    /// computed distance to any point inside it.
    fn bound(&self, node: usize, q: &[f64]) -> f64 {
        let n = &self.nodes[node];
        q.iter()
            .zip(n.lo.iter().zip(&n.hi))
            .map(|(&x, (&lo, &hi))| {
                let c = x.clamp(lo, hi);
                (x - c) * (x - c)
            })
            .sum()
    }

    pub fn search(&self, entries: &[IndexEntry], q: &[f64], heap: &mut KnnHeap) {
        if !self.nodes.is_empty() {
            self.search_node(0, self.bound(0, q), entries, q, heap);
        }
    }

    fn search_node(&self, node: usize, lb: f64, entries: &[IndexEntry], q: &[f64], heap: &mut KnnHeap) {
        if lb > heap.bound() {
            return;
        }
        match &self.nodes[node].kind {
            Kind::Leaf(ps) => {
                for &p in ps {
                    heap.offer(squared_euclidean(q, &entries[p].vector), entries[p].id, p);
                }
            }
            &Kind::Split { left, right, .. } => {
                let (bl, br) = (self.bound(left, q), self.bound(right, q));
                if bl <= br {
                    self.search_node(left, bl, entries, q, heap);
                    self.search_node(right, br, entries, q, heap);
                } else {
                    self.search_node(right, br, entries, q, heap);
                    self.search_node(left, bl, entries, q, heap);
                }
            }
        }
    }

    pub fn insert(&mut self, entries: &[IndexEntry], pos: usize) {
        let v = &entries[pos].vector;
        let mut node = 0;
        loop {
            let n = &mut self.nodes[node];
            for (i, &x) in v.iter().enumerate() {
                n.lo[i] = n.lo[i].min(x);
                n.hi[i] = n.hi[i].max(x);
            }
            match &mut n.kind {
                Kind::Leaf(ps) => {
                    ps.push(pos);
                    return;
                }
                &mut Kind::Split { dim, value, left, right } => {
                    node = if v[dim] < value { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &KdTree, n: usize) -> usize {
            match t.nodes[n].kind {
                Kind::Leaf(_) => 0,
                Kind::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(self, 0)
        }
    }

    pub fn max_leaf_len(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                Kind::Leaf(ps) => Some(ps.len()),
                Kind::Split { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn bytes_estimate(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| {
                let leaf = match &n.kind {
                    Kind::Leaf(ps) => ps.len() * 8,
                    Kind::Split { .. } => 0,
                };
                n.lo.len() * 16 + 48 + leaf
            })
            .sum()
    }
}
