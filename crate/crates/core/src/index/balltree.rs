//! Ball tree: each node is a hypersphere around the centroid of its
//! points. Splits project points onto the line through two mutually far
//! points (found by two farthest-point hops) and cut at the median.

use super::heap::KnnHeap;
use super::{euclidean, squared_euclidean, IndexEntry};

/// Relative slack subtracted from sphere bounds to absorb rounding.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
enum Kind {
    Leaf(Vec<usize>),
    Split { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    center: Vec<f64>,
    radius: f64,
    kind: Kind,
}

#[derive(Debug, Clone)]
pub(crate) struct BallTree {
    nodes: Vec<Node>,
}

fn farthest(entries: &[IndexEntry], positions: &[usize], from: &[f64]) -> (usize, f64) {
    positions
        .iter()
        .map(|&p| (p, squared_euclidean(from, &entries[p].vector)))
        .fold((positions[0], f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

impl BallTree {
    pub fn build(entries: &[IndexEntry], leaf_size: usize) -> Self {
        let mut tree = BallTree { nodes: Vec::new() };
        tree.build_node(entries, (0..entries.len()).collect(), leaf_size);
        tree
    }

    fn build_node(&mut self, entries: &[IndexEntry], mut positions: Vec<usize>, leaf_size: usize) -> usize {
        let d = entries[positions[0]].vector.len();
        let mut center = vec![0.0; d];
        for &p in &positions {
            for (c, &x) in center.iter_mut().zip(&entries[p].vector) {
                *c += x;
            }
        }
        let n = positions.len() as f64;
        center.iter_mut().for_each(|c| *c /= n);
        let radius = positions.iter().map(|&p| euclidean(&center, &entries[p].vector)).fold(0.0, f64::max);

        let id = self.nodes.len();
        let (a, _) = farthest(entries, &positions, &entries[positions[0]].vector);
        let (b, spread) = farthest(entries, &positions, &entries[a].vector);
        if positions.len() <= leaf_size || spread <= 0.0 {
            self.nodes.push(Node { center, radius, kind: Kind::Leaf(positions) });
            return id;
        }
        self.nodes.push(Node { center, radius, kind: Kind::Leaf(Vec::new()) });

        let va = &entries[a].vector;
        let axis: Vec<f64> = entries[b].vector.iter().zip(va).map(|(x, y)| x - y).collect();
        let proj =
            |p: usize| -> f64 { entries[p].vector.iter().zip(va).zip(&axis).map(|((x, o), u)| (x - o) * u).sum() };
        let mut keyed: Vec<(f64, u64, usize)> = positions.iter().map(|&p| (proj(p), entries[p].id, p)).collect();
        keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        positions = keyed.into_iter().map(|k| k.2).collect();

        let right_half = positions.split_off(positions.len() / 2);
        let left = self.build_node(entries, positions, leaf_size);
        let right = self.build_node(entries, right_half, leaf_size);
        self.nodes[id].kind = Kind::Split { left, right };
        id
    }

    /// Lower bound on squared distance from `q` to any point in the ball.
    fn bound(&self, node: usize, q: &[f64]) -> f64 {
        let n = &self.nodes[node];
        let dc = euclidean(q, &n.center);
        let gap = dc - n.radius - BOUND_SLACK * (dc + n.radius);
        if gap > 0.0 {
            gap * gap
        } else {
            0.0
        }
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
            &Kind::Split { left, right } => {
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
            let r = euclidean(&self.nodes[node].center, v);
            let n = &mut self.nodes[node];
            n.radius = n.radius.max(r);
            match &mut n.kind {
                Kind::Leaf(ps) => {
                    ps.push(pos);
                    return;
                }
                &mut Kind::Split { left, right } => {
                    let dl = squared_euclidean(&self.nodes[left].center, v);
                    let dr = squared_euclidean(&self.nodes[right].center, v);
                    node = if dl <= dr { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &BallTree, n: usize) -> usize {
            match t.nodes[n].kind {
                Kind::Leaf(_) => 0,
                Kind::Split { left, right } => 1 + walk(t, left).max(walk(t, right)),
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
                n.center.len() * 8 + 56 + leaf
            })
            .sum()
    }
}
