//! Dyadic cube hierarchies built from nested greedy nets.
//!
//! Level `k` cubes have length `ℓ(Q) = 2^{-k}`. Nets are grown coarse to fine,
//! each level promoting the previous centers and then scanning the remaining
//! points in index order. Below the analysed window the nets keep refining
//! until every point is a center; each center is then linked to its nearest
//! coarser center, and a point belongs to the cube at the end of its chain.
//! This gives exact nesting without a repair pass.

use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{CellGrid, KdTree};
use crate::space::WeightedSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub id: usize,
    pub k: i32,
    /// `x_Q`, a member chosen to maximise the inner ball.
    pub center: usize,
    /// The net point the cube was grown from.
    pub net_center: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Sorted point indices.
    pub members: Vec<usize>,
    pub mass: f64,
}

impl Cube {
    pub fn length(&self) -> f64 {
        0.5f64.powi(self.k)
    }
}

/// Measured constants of properties (iv) and (v).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConstants {
    /// `min dist(x_Q, E \ Q) / ℓ(Q)`; `None` when every cube is all of `E`.
    pub a0: Option<f64>,
    /// `max diam(Q) / ℓ(Q)`.
    pub c1: f64,
}

#[derive(Debug, Clone)]
pub struct DyadicTree {
    set: WeightedSet,
    k_min: i32,
    k_max: i32,
    cubes: Vec<Cube>,
    levels: Vec<Vec<usize>>,
    cube_of: Vec<Vec<u32>>,
    diam: Vec<f64>,
    constants: GridConstants,
    /// Index over the members of each large leaf, built on first use.
    leaf_index: Vec<OnceLock<KdTree>>,
}

fn level_window(set: &WeightedSet) -> Result<(i32, i32)> {
    let (lo, hi) = set.scale_range();
    let k_min = (-hi.log2()).ceil() as i32;
    let k_max = (-(4.0 * lo).log2()).floor() as i32;
    if k_max < k_min {
        return Err(Error::invalid(format!(
            "scale range ({lo}, {hi}) holds no dyadic level"
        )));
    }
    Ok((k_min, k_max))
}

/// Greedy nets from `k_min` until every point is a center. Returns the
/// centers per level and, for each level below the first, the parent map
/// (indexed by point, valid on that level's centers).
fn nested_nets(set: &WeightedSet, k_min: i32, k_last: i32) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = set.len();
    let metric = set.metric();
    let mut nets: Vec<Vec<usize>> = Vec::new();
    let mut parents: Vec<Vec<usize>> = Vec::new();
    let mut is_center = vec![false; n];
    let mut prev_grid: Option<CellGrid> = None;
    let mut k = k_min;
    loop {
        let r = 0.5f64.powi(k);
        let mut grid = CellGrid::new(metric, r);
        let mut centers: Vec<usize> = nets.last().cloned().unwrap_or_default();
        for &c in &centers {
            grid.insert(c, set.point(c));
        }
        let force = k >= k_last;
        for p in 0..n {
            if is_center[p] {
                continue;
            }
            let mut ok = true;
            if !force {
                grid.for_each_near(set.point(p), |c| {
                    if ok && metric.distance(set.point(p), set.point(c)) < r {
                        ok = false;
                    }
                });
            }
            if ok {
                is_center[p] = true;
                centers.push(p);
                grid.insert(p, set.point(p));
            }
        }
        if let Some(pg) = &prev_grid {
            let mut parent = vec![usize::MAX; n];
            for &c in &centers {
                let (pc, _) = pg
                    .nearest(set.point(c), |i| set.point(i))
                    .expect("net is maximal, a coarser center lies within one cell");
                parent[c] = pc;
            }
            parents.push(parent);
        }
        let done = centers.len() == n;
        nets.push(centers);
        prev_grid = Some(grid);
        if done {
            break;
        }
        k += 1;
    }
    (nets, parents)
}

fn cube_diameter(set: &WeightedSet, members: &[usize]) -> f64 {
    if members.len() < 2 {
        return 0.0;
    }
    let dim = set.metric().dim();
    let mut coords = Vec::with_capacity(members.len() * dim);
    for &m in members {
        coords.extend_from_slice(set.point(m));
    }
    KdTree::new(set.metric(), &coords).diameter()
}

/// `dist(p, E \ Q)` for the level-`level` cube `q`.
fn inner_radius(set: &WeightedSet, cube_of: &[u32], q: usize, p: usize) -> f64 {
    set.index()
        .nearest_where(set.point(p), f64::INFINITY, |i| cube_of[i] as usize != q)
        .map_or(f64::INFINITY, |(_, d)| d)
}

/// Builds the cube hierarchy on the levels fixed by the scale range:
/// `2^{-k_min} ≤ r_max` and `2^{-k_max} ≥ 4 r_min`.
pub fn build_tree(set: &WeightedSet) -> Result<DyadicTree> {
    let (k_min, k_max) = level_window(set)?;
    let n = set.len();
    let min_nn = set.min_nn_distance();
    let k_last = if min_nn.is_finite() && min_nn > 0.0 {
        ((-min_nn.log2()).floor() as i32 + 1).max(k_max)
    } else {
        k_max
    }
    .min(k_max + 64);
    let (nets, parents) = nested_nets(set, k_min, k_last);
    let depth = nets.len();

    // anc[j][p]: the level-(k_min + j) center whose cube holds p
    let mut anc: Vec<Vec<usize>> = vec![Vec::new(); depth];
    anc[depth - 1] = (0..n).collect();
    for j in (0..depth - 1).rev() {
        let parent = &parents[j];
        anc[j] = anc[j + 1].iter().map(|&c| parent[c]).collect();
    }
    let window = (k_max - k_min + 1) as usize;
    if window > depth {
        // nets ran out of points before k_max; pad with singleton levels
        for _ in depth..window {
            anc.push((0..n).collect());
        }
    }
    anc.truncate(window);

    let mut cubes: Vec<Cube> = Vec::new();
    let mut levels: Vec<Vec<usize>> = Vec::with_capacity(window);
    let mut cube_of: Vec<Vec<u32>> = Vec::with_capacity(window);
    let mut id_of_center: Vec<usize> = vec![usize::MAX; n];
    for (j, a) in anc.iter().enumerate() {
        let k = k_min + j as i32;
        let mut members_by_center: std::collections::BTreeMap<(usize, usize), Vec<usize>> =
            Default::default();
        let prev_ids = id_of_center.clone();
        for p in 0..n {
            let c = a[p];
            let parent_id = if j == 0 { 0 } else { prev_ids[anc[j - 1][p]] };
            members_by_center.entry((parent_id, c)).or_default().push(p);
        }
        let mut level_ids = Vec::with_capacity(members_by_center.len());
        let mut map = vec![0u32; n];
        for ((parent_id, c), members) in members_by_center {
            let id = cubes.len();
            id_of_center[c] = id;
            for &p in &members {
                map[p] = id as u32;
            }
            let parent = if j == 0 { None } else { Some(parent_id) };
            if let Some(pid) = parent {
                cubes[pid].children.push(id);
            }
            let mass = members.iter().map(|&p| set.weight(p)).sum();
            cubes.push(Cube {
                id,
                k,
                center: c,
                net_center: c,
                parent,
                children: Vec::new(),
                members,
                mass,
            });
            level_ids.push(id);
        }
        levels.push(level_ids);
        cube_of.push(map);
    }

    let dim = set.metric().dim();
    let picks: Vec<(usize, f64, f64)> = cubes
        .par_iter()
        .map(|q| {
            let j = (q.k - k_min) as usize;
            let diam = cube_diameter(set, &q.members);
            let mut centroid = vec![0.0; dim];
            for &m in &q.members {
                for (c, x) in centroid.iter_mut().zip(set.point(m)) {
                    *c += set.weight(m) * x;
                }
            }
            centroid.iter_mut().for_each(|c| *c /= q.mass);
            let near = q
                .members
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = set.metric().distance(&centroid, set.point(a));
                    let db = set.metric().distance(&centroid, set.point(b));
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                })
                .unwrap();
            let rho_net = inner_radius(set, &cube_of[j], q.id, q.net_center);
            let rho_mid = if near == q.net_center {
                rho_net
            } else {
                inner_radius(set, &cube_of[j], q.id, near)
            };
            if rho_mid > rho_net {
                (near, rho_mid, diam)
            } else {
                (q.net_center, rho_net, diam)
            }
        })
        .collect();

    let mut a0: Option<f64> = None;
    let mut c1: f64 = 0.0;
    let mut diam = Vec::with_capacity(cubes.len());
    for (q, &(center, rho, dq)) in cubes.iter_mut().zip(&picks) {
        q.center = center;
        let l = q.length();
        if rho.is_finite() {
            a0 = Some(a0.map_or(rho / l, |a: f64| a.min(rho / l)));
        }
        c1 = c1.max(dq / l);
        diam.push(dq);
        let ball = set.ball_mass(set.point(center), dq);
        if q.mass > ball * (1.0 + 1e-9) {
            return Err(Error::GridViolation {
                property: "mass",
                cube: q.id,
                detail: format!("cached mass {} exceeds ball mass {ball}", q.mass),
            });
        }
    }

    let n_cubes = cubes.len();
    Ok(DyadicTree {
        set: set.clone(),
        k_min,
        k_max,
        cubes,
        levels,
        cube_of,
        leaf_index: (0..n_cubes).map(|_| OnceLock::new()).collect(),
        diam,
        constants: GridConstants { a0, c1 },
    })
}

impl DyadicTree {
    pub fn set(&self) -> &WeightedSet {
        &self.set
    }

    pub fn k_min(&self) -> i32 {
        self.k_min
    }

    pub fn k_max(&self) -> i32 {
        self.k_max
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn cubes(&self) -> &[Cube] {
        &self.cubes
    }

    pub fn cube(&self, id: usize) -> &Cube {
        &self.cubes[id]
    }

    pub fn constants(&self) -> GridConstants {
        self.constants
    }

    /// Cube ids of level `k`.
    pub fn level(&self, k: i32) -> &[usize] {
        &self.levels[(k - self.k_min) as usize]
    }

    pub fn roots(&self) -> &[usize] {
        &self.levels[0]
    }

    pub fn leaves(&self) -> &[usize] {
        self.levels.last().unwrap()
    }

    pub fn length(&self, id: usize) -> f64 {
        self.cubes[id].length()
    }

    pub fn mass(&self, id: usize) -> f64 {
        self.cubes[id].mass
    }

    pub fn diam(&self, id: usize) -> f64 {
        self.diam[id]
    }

    pub fn center_point(&self, id: usize) -> &[f64] {
        self.set.point(self.cubes[id].center)
    }

    /// Cube of level `k` holding point `p`.
    pub fn cube_of_point(&self, p: usize, k: i32) -> usize {
        self.cube_of[(k - self.k_min) as usize][p] as usize
    }

    pub fn contains_point(&self, id: usize, p: usize) -> bool {
        self.cube_of_point(p, self.cubes[id].k) == id
    }

    /// Ancestor of `id` at level `k ≤ k(id)`.
    pub fn ancestor_at(&self, id: usize, k: i32) -> usize {
        let mut q = id;
        while self.cubes[q].k > k {
            q = self.cubes[q].parent.expect("level above the window");
        }
        q
    }

    /// True if cube `b` is contained in cube `a` (or equal).
    pub fn is_within(&self, b: usize, a: usize) -> bool {
        self.cubes[b].k >= self.cubes[a].k && self.ancestor_at(b, self.cubes[a].k) == a
    }

    /// `𝔻_Q` in pre-order, `Q` first.
    pub fn descendants(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(q) = stack.pop() {
            out.push(q);
            stack.extend(self.cubes[q].children.iter().rev());
        }
        out
    }

    /// Cube ids ordered so that children come before parents.
    pub fn bottom_up(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.iter().rev().flat_map(|l| l.iter().copied())
    }

    /// `dist(Q, R)` between member sets.
    pub fn cube_distance(&self, a: usize, b: usize) -> f64 {
        let (small, big) = if self.cubes[a].members.len() <= self.cubes[b].members.len() {
            (a, b)
        } else {
            (b, a)
        };
        let kb = self.cubes[big].k;
        let mut best = f64::INFINITY;
        for &p in &self.cubes[small].members {
            if let Some((_, d)) = self.set.index().nearest_where(self.set.point(p), best, |i| {
                self.cube_of_point(i, kb) == big
            }) {
                best = best.min(d);
            }
        }
        best
    }

    /// `dist(x, Q)`.
    pub fn point_to_cube(&self, x: &[f64], id: usize) -> f64 {
        let k = self.cubes[id].k;
        self.set
            .index()
            .nearest_where(x, f64::INFINITY, |i| self.cube_of_point(i, k) == id)
            .map_or(f64::INFINITY, |(_, d)| d)
    }

    /// Moves point `p` into cube `to` on that cube's level only, leaving all
    /// other levels untouched. Meant for fault-injection tests of
    /// [`validate_grid`].
    pub fn reassign_point(&mut self, p: usize, to: usize) {
        let k = self.cubes[to].k;
        let j = (k - self.k_min) as usize;
        let from = self.cube_of[j][p] as usize;
        if from == to {
            return;
        }
        self.cubes[from].members.retain(|&m| m != p);
        let pos = self.cubes[to].members.binary_search(&p).unwrap_err();
        self.cubes[to].members.insert(pos, p);
        self.cube_of[j][p] = to as u32;
        let w = self.set.weight(p);
        self.cubes[from].mass -= w;
        self.cubes[to].mass += w;
    }

    /// JSON Lines export, one cube per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for q in &self.cubes {
            let line = serde_json::json!({
                "id": q.id,
                "k": q.k,
                "parent": q.parent,
                "center": q.center,
                "members_count": q.members.len(),
                "mass": q.mass,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Membership CSV `cube_id,point`.
    pub fn write_members_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "cube_id,point")?;
        for q in &self.cubes {
            for &m in &q.members {
                writeln!(w, "{},{m}", q.id)?;
            }
        }
        Ok(())
    }
}

/// Exhaustive check of partition, nesting, ancestor uniqueness, cached masses
/// and centers, measuring the constants of the diameter and inner-ball
/// properties from the member lists alone.
pub fn validate_grid(tree: &DyadicTree) -> Result<GridConstants> {
    let set = &tree.set;
    let n = set.len();
    let viol = |property: &'static str, cube: usize, detail: String| Error::GridViolation {
        property,
        cube,
        detail,
    };
    // point -> cube per level, rebuilt from member lists
    let mut owner: Vec<Vec<usize>> = Vec::with_capacity(tree.levels.len());
    for level in &tree.levels {
        let mut own = vec![usize::MAX; n];
        for &q in level {
            for &p in &tree.cubes[q].members {
                if own[p] != usize::MAX {
                    return Err(viol(
                        "partition",
                        q,
                        format!("point {p} also lies in cube {}", own[p]),
                    ));
                }
                own[p] = q;
            }
        }
        if let Some(p) = own.iter().position(|&o| o == usize::MAX) {
            return Err(viol("partition", level[0], format!("point {p} lies in no cube")));
        }
        owner.push(own);
    }
    for q in &tree.cubes {
        let j = (q.k - tree.k_min) as usize;
        if let Some(pid) = q.parent {
            let parent = &tree.cubes[pid];
            if parent.k != q.k - 1 || !parent.children.contains(&q.id) {
                return Err(viol("nesting", q.id, format!("inconsistent parent link {pid}")));
            }
            if let Some(&p) = q.members.iter().find(|&&p| owner[j - 1][p] != pid) {
                return Err(viol(
                    "nesting",
                    q.id,
                    format!("member {p} is outside parent {pid}"),
                ));
            }
        } else if j != 0 {
            return Err(viol("nesting", q.id, "cube below the top level has no parent".into()));
        }
        if q.members.is_empty() {
            return Err(viol("partition", q.id, "empty cube".into()));
        }
        for (m, own) in owner.iter().enumerate().take(j) {
            let first = own[q.members[0]];
            if let Some(&p) = q.members.iter().find(|&&p| own[p] != first) {
                return Err(viol(
                    "ancestry",
                    q.id,
                    format!(
                        "members split between level-{} cubes {first} and {}",
                        tree.k_min + m as i32,
                        own[p]
                    ),
                ));
            }
        }
        if owner[j][q.center] != q.id {
            return Err(viol("center", q.id, format!("x_Q = {} is not a member", q.center)));
        }
        let mass: f64 = q.members.iter().map(|&p| set.weight(p)).sum();
        if (mass - q.mass).abs() > 1e-12 * mass.max(q.mass) {
            return Err(viol("mass", q.id, format!("cached {} vs {mass}", q.mass)));
        }
    }
    let measured: Vec<(f64, f64)> = tree
        .cubes
        .par_iter()
        .map(|q| {
            let j = (q.k - tree.k_min) as usize;
            let l = q.length();
            let diam = cube_diameter(set, &q.members);
            let own = &owner[j];
            let rho = set
                .index()
                .nearest_where(set.point(q.center), f64::INFINITY, |i| own[i] != q.id)
                .map_or(f64::INFINITY, |(_, d)| d);
            (diam / l, rho / l)
        })
        .collect();
    let mut c1: f64 = 0.0;
    let mut a0: Option<f64> = None;
    for &(c, a) in &measured {
        c1 = c1.max(c);
        if a.is_finite() {
            a0 = Some(a0.map_or(a, |x: f64| x.min(a)));
        }
    }
    Ok(GridConstants { a0, c1 })
}

/// `KQ = {x ∈ E : dist(x, Q) ≤ (K − 1) diam Q}`, sorted.
pub fn dilate(tree: &DyadicTree, id: usize, big_k: f64) -> Result<Vec<usize>> {
    if !(big_k >= 1.0) {
        return Err(Error::invalid(format!("dilation K = {big_k} must be at least 1")));
    }
    let q = &tree.cubes[id];
    let diam = tree.diam[id];
    let reach = (big_k - 1.0) * diam;
    if reach == 0.0 {
        return Ok(q.members.clone());
    }
    let set = &tree.set;
    let k = q.k;
    let mut out = Vec::new();
    let mut stack = Vec::new();
    set.index()
        .for_each_in_ball(set.point(q.center), diam + reach, |i, _| {
            if tree.cube_of_point(i, k) == id || near_cube(tree, id, set.point(i), reach, &mut stack) {
                out.push(i);
            }
        });
    out.sort_unstable();
    Ok(out)
}

const LEAF_SCAN: usize = 64;

/// Whether some member of `id` lies within `reach` of `x`, by descent
/// through the subtree: a cube is pruned once its centre is farther than
/// `reach + diam`, and accepted as soon as its centre is within `reach`.
fn near_cube(tree: &DyadicTree, id: usize, x: &[f64], reach: f64, stack: &mut Vec<usize>) -> bool {
    let set = &tree.set;
    let metric = set.metric();
    stack.clear();
    stack.push(id);
    while let Some(p) = stack.pop() {
        let cube = &tree.cubes[p];
        let d = metric.distance(x, set.point(cube.center));
        if d <= reach {
            return true;
        }
        if d - tree.diam[p] > reach * (1.0 + 1e-12) {
            continue;
        }
        if cube.children.is_empty() {
            let hit = if cube.members.len() <= LEAF_SCAN {
                cube.members.iter().any(|&m| metric.distance(x, set.point(m)) <= reach)
            } else {
                tree.leaf_index[p]
                    .get_or_init(|| {
                        let coords: Vec<f64> = cube.members.iter().flat_map(|&m| set.point(m).iter().copied()).collect();
                        KdTree::new(metric, &coords)
                    })
                    .any_in_ball(x, reach, |_| true)
            };
            if hit {
                return true;
            }
        } else {
            stack.extend(cube.children.iter().copied());
        }
    }
    false
}

/// `𝔻_{F,Q0}`: descendants of `q0` (inclusive) not inside any member of `family`.
pub fn sawtooth(tree: &DyadicTree, q0: usize, family: &[usize]) -> Result<Vec<usize>> {
    check_family(tree, q0, family)?;
    let mut stop = vec![false; tree.len()];
    for &f in family {
        stop[f] = true;
    }
    let mut out = Vec::new();
    let mut stack = vec![q0];
    while let Some(q) = stack.pop() {
        if stop[q] {
            continue;
        }
        out.push(q);
        stack.extend(tree.cubes[q].children.iter().rev());
    }
    Ok(out)
}

/// Checks that `family` is a set of pairwise disjoint cubes inside `q0`.
pub fn check_family(tree: &DyadicTree, q0: usize, family: &[usize]) -> Result<()> {
    let mut seen = vec![false; tree.len()];
    for &f in family {
        if f >= tree.len() {
            return Err(Error::invalid(format!("unknown cube {f}")));
        }
        if seen[f] {
            return Err(Error::invalid(format!("cube {f} listed twice")));
        }
        seen[f] = true;
        if !tree.is_within(f, q0) {
            return Err(Error::invalid(format!("cube {f} is not inside cube {q0}")));
        }
    }
    for &f in family {
        let mut a = tree.cubes[f].parent;
        while let Some(p) = a {
            if seen[p] {
                return Err(Error::invalid(format!("cubes {f} and {p} overlap")));
            }
            a = tree.cubes[p].parent;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::Metric;

    fn unit_interval(bits: u32) -> WeightedSet {
        let n = 1usize << bits;
        let h = 1.0 / n as f64;
        let coords = (0..n).map(|i| i as f64 * h).collect();
        WeightedSet::new(Metric::Euclidean { n: 1 }, coords, vec![h; n], 1.0, (2.0 * h, 1.0)).unwrap()
    }

    #[test]
    fn one_dimensional_cubes_are_dyadic_intervals() {
        let set = unit_interval(10);
        let tree = build_tree(&set).unwrap();
        assert_eq!((tree.k_min(), tree.k_max()), (0, 7));
        for k in tree.k_min()..=tree.k_max() {
            let l = 0.5f64.powi(k);
            for &q in tree.level(k) {
                let members = &tree.cube(q).members;
                let first = set.point(members[0])[0];
                let j = (first / l).round();
                assert_eq!(first, j * l);
                for &m in members {
                    let x = set.point(m)[0];
                    assert!(x >= j * l && x < (j + 1.0) * l);
                }
                assert_eq!(members.len(), (l * 1024.0) as usize);
            }
        }
        let c = validate_grid(&tree).unwrap();
        assert!(c.c1 <= 2.0);
        // the whole interval is the level-0 cube, so a0 comes from finer levels
        assert!(c.a0.unwrap() >= 0.25, "a0 = {:?}", c.a0);
        assert_eq!(c, tree.constants());
    }

    #[test]
    fn single_point_gives_a_chain() {
        let set =
            WeightedSet::new(Metric::Euclidean { n: 2 }, vec![0.5, 0.5], vec![1.0], 1.0, (0.01, 1.0))
                .unwrap();
        let tree = build_tree(&set).unwrap();
        for k in tree.k_min()..=tree.k_max() {
            assert_eq!(tree.level(k).len(), 1);
        }
        let c = validate_grid(&tree).unwrap();
        assert_eq!(c.a0, None);
        assert_eq!(c.c1, 0.0);
    }

    #[test]
    fn moved_point_breaks_nesting() {
        let set = unit_interval(8);
        let mut tree = build_tree(&set).unwrap();
        let k = tree.k_min() + 2;
        let q = tree.level(k)[0];
        let other = tree.level(k)[1];
        let p = *tree
            .cube(q)
            .members
            .iter()
            .find(|&&m| m != tree.cube(q).center)
            .unwrap();
        tree.reassign_point(p, other);
        match validate_grid(&tree) {
            Err(Error::GridViolation { property, .. }) => assert_eq!(property, "nesting"),
            other => panic!("expected a nesting violation, got {other:?}"),
        }
    }

    #[test]
    fn dilation_cases() {
        let set = unit_interval(10);
        let tree = build_tree(&set).unwrap();
        let k = 5;
        let q = tree.level(k)[10];
        assert_eq!(dilate(&tree, q, 1.0).unwrap(), tree.cube(q).members);
        let kq = dilate(&tree, q, 2.0).unwrap();
        let diam = tree.diam(q);
        let brute: Vec<usize> = (0..set.len())
            .filter(|&i| {
                tree.cube(q)
                    .members
                    .iter()
                    .any(|&m| set.distance(i, m) <= diam)
            })
            .collect();
        assert_eq!(kq, brute);
        let ratio = kq.len() as f64 / tree.cube(q).members.len() as f64;
        assert!((ratio - 3.0).abs() < 0.1, "ratio {ratio}");
        assert!(dilate(&tree, q, 0.5).is_err());
    }

    #[test]
    fn isolated_cube_dilates_to_itself() {
        // two clusters far apart
        let mut coords: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
        coords.extend((0..64).map(|i| 100.0 + i as f64 / 64.0));
        let set = WeightedSet::new(
            Metric::Euclidean { n: 1 },
            coords,
            vec![1.0 / 64.0; 128],
            1.0,
            (2.0 / 64.0, 1.0),
        )
        .unwrap();
        let tree = build_tree(&set).unwrap();
        let q = tree.cube_of_point(0, tree.k_min());
        assert_eq!(dilate(&tree, q, 2.0).unwrap(), tree.cube(q).members);
    }

    #[test]
    fn sawtooth_cases() {
        let set = unit_interval(8);
        let tree = build_tree(&set).unwrap();
        let q0 = tree.level(tree.k_min() + 1)[0];
        assert_eq!(sawtooth(&tree, q0, &[]).unwrap(), tree.descendants(q0));
        assert!(sawtooth(&tree, q0, &[q0]).unwrap().is_empty());
        let kids = tree.cube(q0).children.clone();
        assert_eq!(sawtooth(&tree, q0, &kids).unwrap(), vec![q0]);
        let grandchild = tree.cube(kids[0]).children[0];
        assert!(sawtooth(&tree, q0, &[kids[0], grandchild]).is_err());
    }

    #[test]
    fn jsonl_export_has_one_line_per_cube() {
        let tree = build_tree(&unit_interval(6)).unwrap();
        let mut buf = Vec::new();
        tree.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), tree.len());
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["members_count"], 64);
    }
}
