//! Spatial indexes for ball queries under either metric.
//!
//! [`KdTree`] is a static bounding-box tree used for range and nearest
//! queries. [`CellGrid`] is a hash grid with cells sized to a fixed radius,
//! used while growing separated nets one point at a time.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::metric::Metric;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    // usize::MAX for leaves
    left: usize,
    right: usize,
}

/// Static kd-tree over a flat coordinate buffer.
#[derive(Debug, Clone)]
pub struct KdTree {
    metric: Metric,
    dim: usize,
    coords: Vec<f64>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    bbox: Vec<f64>,
    // per-node weight sums, empty until `with_weights`
    mass: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(PartialEq)]
struct HeapItem {
    bound: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on bound
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl KdTree {
    /// Builds the tree over `coords` (row-major, `metric.dim()` values per point).
    pub fn new(metric: Metric, coords: &[f64]) -> Self {
        let dim = metric.dim();
        let n = if dim == 0 { 0 } else { coords.len() / dim };
        let mut tree = KdTree {
            metric,
            dim,
            coords: coords.to_vec(),
            order: (0..n as u32).collect(),
            nodes: Vec::new(),
            bbox: Vec::new(),
            mass: Vec::new(),
            weights: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    /// Attaches point weights so that [`KdTree::mass_in_ball`] can skip whole subtrees.
    pub fn with_weights(mut self, weights: &[f64]) -> Self {
        assert_eq!(weights.len(), self.len());
        self.weights = weights.to_vec();
        self.mass = self
            .nodes
            .iter()
            .map(|nd| {
                self.order[nd.start as usize..nd.end as usize]
                    .iter()
                    .map(|&p| weights[p as usize])
                    .sum()
            })
            .collect();
        self
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let dim = self.dim;
        let id = self.nodes.len();
        self.nodes.push(Node {
            start: start as u32,
            end: end as u32,
            left: usize::MAX,
            right: usize::MAX,
        });
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &p in &self.order[start..end] {
            let c = &self.coords[p as usize * dim..(p as usize + 1) * dim];
            for k in 0..dim {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        self.bbox.extend_from_slice(&lo);
        self.bbox.extend_from_slice(&hi);
        if end - start > LEAF_SIZE {
            let axis = (0..dim)
                .max_by(|&a, &b| {
                    (hi[a] - lo[a])
                        .partial_cmp(&(hi[b] - lo[b]))
                        .unwrap_or(Ordering::Equal)
                })
                .unwrap_or(0);
            if hi[axis] > lo[axis] {
                let mid = (start + end) / 2;
                let coords = &self.coords;
                self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                    coords[a as usize * dim + axis]
                        .partial_cmp(&coords[b as usize * dim + axis])
                        .unwrap_or(Ordering::Equal)
                        .then(a.cmp(&b))
                });
                let left = self.build(start, mid);
                let right = self.build(mid, end);
                self.nodes[id].left = left;
                self.nodes[id].right = right;
            }
        }
        id
    }

    #[inline]
    fn node_bound(&self, node: usize, q: &[f64]) -> f64 {
        let b = &self.bbox[node * 2 * self.dim..(node + 1) * 2 * self.dim];
        self.metric.box_lower_bound(q, &b[..self.dim], &b[self.dim..])
    }

    /// Visits every point within the closed ball `B(q, r)`.
    pub fn for_each_in_ball(&self, q: &[f64], r: f64, mut f: impl FnMut(usize, f64)) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if self.node_bound(node, q) > r {
                continue;
            }
            let nd = &self.nodes[node];
            if nd.left == usize::MAX {
                for &p in &self.order[nd.start as usize..nd.end as usize] {
                    let d = self.metric.distance(q, self.point(p as usize));
                    if d <= r {
                        f(p as usize, d);
                    }
                }
            } else {
                stack.push(nd.left);
                stack.push(nd.right);
            }
        }
    }

    #[inline]
    fn node_upper(&self, node: usize, q: &[f64]) -> f64 {
        let b = &self.bbox[node * 2 * self.dim..(node + 1) * 2 * self.dim];
        self.metric.box_upper_bound(q, &b[..self.dim], &b[self.dim..])
    }

    /// Total weight inside the closed ball `B(q, r)`. Requires [`KdTree::with_weights`].
    ///
    /// Subtrees are summed in a fixed traversal order, so the result is deterministic.
    pub fn mass_in_ball(&self, q: &[f64], r: f64) -> f64 {
        assert!(!self.mass.is_empty() || self.nodes.is_empty(), "tree has no weights");
        if self.nodes.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if self.node_bound(node, q) > r {
                continue;
            }
            if self.node_upper(node, q) <= r {
                total += self.mass[node];
                continue;
            }
            let nd = &self.nodes[node];
            if nd.left == usize::MAX {
                for &p in &self.order[nd.start as usize..nd.end as usize] {
                    if self.metric.distance(q, self.point(p as usize)) <= r {
                        total += self.weights[p as usize];
                    }
                }
            } else {
                stack.push(nd.right);
                stack.push(nd.left);
            }
        }
        total
    }

    /// Farthest point from `q` provided it is strictly farther than `beyond`.
    pub fn farthest_beyond(&self, q: &[f64], beyond: f64) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut floor = beyond;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if self.node_upper(node, q) <= floor {
                continue;
            }
            let nd = &self.nodes[node];
            if nd.left == usize::MAX {
                for &p in &self.order[nd.start as usize..nd.end as usize] {
                    let d = self.metric.distance(q, self.point(p as usize));
                    if d > floor {
                        floor = d;
                        best = Some((p as usize, d));
                    }
                }
            } else {
                let (a, b) = (nd.left, nd.right);
                if self.node_upper(a, q) > self.node_upper(b, q) {
                    stack.push(b);
                    stack.push(a);
                } else {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        best
    }

    /// Exact diameter of the stored points (0 for fewer than two points).
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        // double sweep gives a good starting lower bound
        let (a, _) = self.farthest_beyond(self.point(0), -1.0).unwrap();
        let (_, mut best) = self.farthest_beyond(self.point(a), -1.0).unwrap();
        for i in 0..n {
            if self.node_upper(0, self.point(i)) <= best {
                continue;
            }
            if let Some((_, d)) = self.farthest_beyond(self.point(i), best) {
                best = d;
            }
        }
        best
    }

    /// Indices and distances of the points in `B(q, r)`, sorted by (distance, index).
    pub fn ball(&self, q: &[f64], r: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each_in_ball(q, r, |i, d| out.push((i, d)));
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        out
    }

    /// True if some point of `B(q, r)` satisfies `pred`.
    pub fn any_in_ball(&self, q: &[f64], r: f64, mut pred: impl FnMut(usize) -> bool) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if self.node_bound(node, q) > r {
                continue;
            }
            let nd = &self.nodes[node];
            if nd.left == usize::MAX {
                for &p in &self.order[nd.start as usize..nd.end as usize] {
                    if self.metric.distance(q, self.point(p as usize)) <= r && pred(p as usize) {
                        return true;
                    }
                }
            } else {
                stack.push(nd.left);
                stack.push(nd.right);
            }
        }
        false
    }

    /// Nearest point satisfying `pred` within distance `max_r` (ties: smallest index).
    pub fn nearest_where(
        &self,
        q: &[f64],
        max_r: f64,
        mut pred: impl FnMut(usize) -> bool,
    ) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem {
            bound: self.node_bound(0, q),
            node: 0,
        });
        while let Some(HeapItem { bound, node }) = heap.pop() {
            if bound > max_r {
                break;
            }
            if let Some((_, bd)) = best {
                if bound > bd {
                    break;
                }
            }
            let nd = &self.nodes[node];
            if nd.left == usize::MAX {
                for &p in &self.order[nd.start as usize..nd.end as usize] {
                    let p = p as usize;
                    let d = self.metric.distance(q, self.point(p));
                    if d > max_r {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && p < bi),
                    };
                    if better && pred(p) {
                        best = Some((p, d));
                    }
                }
            } else {
                for child in [nd.left, nd.right] {
                    let b = self.node_bound(child, q);
                    if b <= max_r {
                        heap.push(HeapItem {
                            bound: b,
                            node: child,
                        });
                    }
                }
            }
        }
        best
    }

    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        self.nearest_where(q, f64::INFINITY, |_| true)
    }
}

/// Hash grid whose cells are sized so that a ball of radius `< cell` around
/// any point lies inside the 3^dim block of cells around it.
#[derive(Debug, Clone)]
pub struct CellGrid {
    metric: Metric,
    cell: Vec<f64>,
    buckets: HashMap<u64, Vec<u32>>,
}

#[inline]
fn mix(h: u64, v: i64) -> u64 {
    (h.rotate_left(5) ^ (v as u64)).wrapping_mul(0x517c_c1b7_2722_0a95)
}

impl CellGrid {
    pub fn new(metric: Metric, radius: f64) -> Self {
        CellGrid {
            metric,
            cell: metric.box_half_extent(radius),
            buckets: HashMap::new(),
        }
    }

    fn cell_of(&self, p: &[f64]) -> Vec<i64> {
        p.iter()
            .zip(&self.cell)
            .map(|(c, s)| (c / s).floor() as i64)
            .collect()
    }

    fn key(cell: &[i64]) -> u64 {
        cell.iter().fold(0xcbf2_9ce4_8422_2325, |h, &v| mix(h, v))
    }

    pub fn insert(&mut self, id: usize, p: &[f64]) {
        let key = Self::key(&self.cell_of(p));
        self.buckets.entry(key).or_default().push(id as u32);
    }

    /// Calls `f` with every stored id whose cell neighbours the cell of `p`.
    pub fn for_each_near(&self, p: &[f64], mut f: impl FnMut(usize)) {
        let base = self.cell_of(p);
        let dim = base.len();
        let total = 3usize.pow(dim as u32);
        let mut cur = vec![0i64; dim];
        for code in 0..total {
            let mut c = code;
            for k in 0..dim {
                cur[k] = base[k] + (c % 3) as i64 - 1;
                c /= 3;
            }
            if let Some(bucket) = self.buckets.get(&Self::key(&cur)) {
                for &id in bucket {
                    f(id as usize);
                }
            }
        }
    }

    /// Nearest stored id to `p` among neighbouring cells (ties: smallest id),
    /// with `coords(id)` supplying each stored point.
    pub fn nearest<'a>(
        &self,
        p: &[f64],
        coords: impl Fn(usize) -> &'a [f64],
    ) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.for_each_near(p, |id| {
            let d = self.metric.distance(p, coords(id));
            let better = match best {
                None => true,
                Some((bi, bd)) => d < bd || (d == bd && id < bi),
            };
            if better {
                best = Some((id, d));
            }
        });
        best
    }
}
