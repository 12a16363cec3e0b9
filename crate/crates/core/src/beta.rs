//! β-numbers against plane families or explicit sets, the geometric-lemma
//! verifiers, proximity numbers `I_q`, companion cubes and the comparison
//! checks that move geometric lemmas from big pieces to the whole set.
//!
//! Planes act on the spatial coordinates only. A parabolic plane contains a
//! line parallel to the time axis, so `dist((Y, s), P) = dist_X(Y, P ∩ {t = s})`
//! and it is an affine hyperplane of the spatial slice.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::bigpieces::{bp_check_with, delta_match, lies_on};
use crate::carleson::{
    carleson_norm, packing_check, subtree_sums, DiscreteMeasure, NormReport, PackingReport, ROUNDING,
};
use crate::corona::{distance_cache, ApproximantCatalog};
use crate::dyadic::{build_tree, dilate, DyadicTree};
use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::space::WeightedSet;

/// The collection `𝒜` that β-numbers are measured against.
#[derive(Debug, Clone)]
pub enum PlaneFamily {
    /// Affine `k`-planes of `ℝⁿ`.
    AffinePlanes { n: usize, k: usize },
    /// Hyperplanes of `ℝⁿ⁺¹` containing a line parallel to the time axis.
    ParabolicPlanes { n: usize },
    ExplicitSets(Vec<WeightedSet>),
}

impl PlaneFamily {
    pub fn affine(n: usize, k: usize) -> Self {
        PlaneFamily::AffinePlanes { n, k }
    }

    pub fn parabolic(n: usize) -> Self {
        PlaneFamily::ParabolicPlanes { n }
    }

    pub fn name(&self) -> String {
        match self {
            PlaneFamily::AffinePlanes { n, k } => format!("affine({n},{k})"),
            PlaneFamily::ParabolicPlanes { n } => format!("parabolic({n})"),
            PlaneFamily::ExplicitSets(s) => format!("sets({})", s.len()),
        }
    }

    /// `(spatial dimension, plane dimension)` for plane families.
    fn shape(&self) -> Option<(usize, usize)> {
        match *self {
            PlaneFamily::AffinePlanes { n, k } => Some((n, k)),
            PlaneFamily::ParabolicPlanes { n } => Some((n, n - 1)),
            PlaneFamily::ExplicitSets(_) => None,
        }
    }

    fn check(&self, metric: Metric) -> Result<()> {
        match *self {
            PlaneFamily::AffinePlanes { n, k } => {
                if metric != (Metric::Euclidean { n }) {
                    return Err(Error::invalid(format!("affine planes of R^{n} on a {} cloud", metric.name())));
                }
                if k >= n {
                    return Err(Error::invalid(format!("plane dimension {k} must be below {n}")));
                }
            }
            PlaneFamily::ParabolicPlanes { n } => {
                if metric != (Metric::Parabolic { n }) || n == 0 {
                    return Err(Error::invalid(format!(
                        "parabolic planes with n = {n} on a {} cloud",
                        metric.name()
                    )));
                }
            }
            PlaneFamily::ExplicitSets(ref sets) => {
                if sets.is_empty() {
                    return Err(Error::invalid("empty explicit family"));
                }
                if sets.iter().any(|s| s.metric() != metric) {
                    return Err(Error::invalid("explicit family uses another metric"));
                }
            }
        }
        Ok(())
    }
}

/// An affine plane of the spatial slice: `origin + span(tangents)`, with the
/// orthonormal complement `normals`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub origin: Vec<f64>,
    pub tangents: Vec<Vec<f64>>,
    pub normals: Vec<Vec<f64>>,
}

impl Plane {
    fn dist(&self, y: &[f64]) -> f64 {
        let mut s = 0.0;
        for nu in &self.normals {
            let mut h = 0.0;
            for i in 0..nu.len() {
                h += nu[i] * (y[i] - self.origin[i]);
            }
            s += h * h;
        }
        s.sqrt()
    }

    fn project(&self, y: &[f64]) -> Vec<f64> {
        let mut z = y.to_vec();
        for nu in &self.normals {
            let h: f64 = (0..nu.len()).map(|i| nu[i] * (y[i] - self.origin[i])).sum();
            for i in 0..nu.len() {
                z[i] -= h * nu[i];
            }
        }
        z
    }

    fn params(&self) -> Vec<f64> {
        let mut v = self.origin.clone();
        for nu in &self.normals {
            v.extend(nu);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Minimizer {
    Plane(Plane),
    Set(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    Lq,
    Sup,
    Bilateral,
}

fn ser_q<S: Serializer>(q: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if q.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaValue {
    pub cube: usize,
    pub kind: BetaKind,
    #[serde(serialize_with = "ser_q")]
    pub q: f64,
    pub value: f64,
    pub minimizer: Minimizer,
    /// Achieved value of a non-convex search rather than a certified infimum.
    pub heuristic: bool,
    /// `μ(κQ)/μ(Q)`, to turn `value` into a power mean over `κQ`.
    pub mass_ratio: f64,
}

impl BetaValue {
    /// `value` with the integral normalized by `μ(κQ)` instead of `μ(Q)`.
    pub fn normalized(&self) -> f64 {
        if self.q.is_finite() {
            self.value * self.mass_ratio.powf(-1.0 / self.q)
        } else {
            self.value
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaOptions {
    /// Dilation of the cube and of the bilateral ball.
    pub kappa: f64,
    pub max_iter: usize,
    pub seeds: usize,
    /// Grid steps per plane direction when sampling `A ∩ B`.
    pub grid_steps: usize,
}

impl Default for BetaOptions {
    fn default() -> Self {
        BetaOptions {
            kappa: 2.0,
            max_iter: 50,
            seeds: 3,
            grid_steps: 9,
        }
    }
}

/// The dilated cube gathered once.
struct Patch {
    /// Spatial coordinates, row per point.
    xs: Vec<Vec<f64>>,
    w: Vec<f64>,
    mu_q: f64,
    diam: f64,
    center: Vec<f64>,
    idx: Vec<usize>,
}

/// Computes β-numbers of the cubes of one tree against one family.
pub struct Beta<'a> {
    tree: &'a DyadicTree,
    family: &'a PlaneFamily,
    opts: BetaOptions,
}

impl<'a> Beta<'a> {
    pub fn new(tree: &'a DyadicTree, family: &'a PlaneFamily) -> Result<Self> {
        Self::with_options(tree, family, BetaOptions::default())
    }

    pub fn with_options(tree: &'a DyadicTree, family: &'a PlaneFamily, opts: BetaOptions) -> Result<Self> {
        family.check(tree.set().metric())?;
        if !(opts.kappa >= 2.0) {
            return Err(Error::invalid(format!("dilation κ = {} must be at least 2", opts.kappa)));
        }
        if opts.max_iter == 0 || opts.seeds == 0 || opts.grid_steps < 2 {
            return Err(Error::invalid("search budgets must be positive"));
        }
        Ok(Beta { tree, family, opts })
    }

    pub fn tree(&self) -> &DyadicTree {
        self.tree
    }

    fn patch(&self, id: usize) -> Result<Patch> {
        if id >= self.tree.len() {
            return Err(Error::invalid(format!("unknown cube {id}")));
        }
        let set = self.tree.set();
        let s = set.metric().spatial_dim();
        let idx = dilate(self.tree, id, self.opts.kappa)?;
        let xs = idx.iter().map(|&i| set.point(i)[..s].to_vec()).collect();
        let w = idx.iter().map(|&i| set.weight(i)).collect();
        Ok(Patch {
            xs,
            w,
            mu_q: self.tree.mass(id),
            diam: self.tree.diam(id),
            center: set.point(self.tree.cube(id).center).to_vec(),
            idx,
        })
    }

    fn value(&self, id: usize, kind: BetaKind, q: f64, value: f64, minimizer: Minimizer, heuristic: bool, p: &Patch) -> BetaValue {
        BetaValue {
            cube: id,
            kind,
            q,
            value,
            minimizer,
            heuristic,
            mass_ratio: p.w.iter().sum::<f64>() / p.mu_q,
        }
    }

    /// `β_q(Q)` for `q ∈ (0, ∞)`.
    pub fn lq(&self, id: usize, q: f64) -> Result<BetaValue> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::invalid(format!("q = {q} must be finite and positive")));
        }
        let p = self.patch(id)?;
        let (value, minimizer, heuristic) = match self.family {
            PlaneFamily::ExplicitSets(sets) => {
                let (j, v) = best_set(sets, |a| {
                    let s: f64 = p.idx.iter().zip(&p.w).map(|(&i, w)| w * a.dist_to(self.tree.set().point(i)).powf(q)).sum();
                    lq_value(s, p.mu_q, p.diam, q)
                });
                (v, Minimizer::Set(j), false)
            }
            _ => {
                let (s, k) = self.family.shape().unwrap();
                if p.diam == 0.0 {
                    (0.0, Minimizer::Plane(through(&p.center[..s], s, k)), false)
                } else {
                    let fit = pca_fit(&p.xs, &p.w, s, k);
                    if q == 2.0 {
                        (lq_of(&fit, &p, q), Minimizer::Plane(fit), false)
                    } else {
                        let (plane, v) = self.irls(&p, fit, q, s, k);
                        (v, Minimizer::Plane(plane), true)
                    }
                }
            }
        };
        Ok(self.value(id, BetaKind::Lq, q, value, minimizer, heuristic, &p))
    }

    fn irls(&self, p: &Patch, fit: Plane, q: f64, s: usize, k: usize) -> (Plane, f64) {
        let mut best = (fit.clone(), lq_of(&fit, p, q));
        let floor = 1e-9 * p.diam;
        for seed in 0..self.opts.seeds {
            let mut plane = match seed {
                0 => fit.clone(),
                _ => {
                    let sign = if seed % 2 == 1 { 1.0 } else { -1.0 };
                    let mut pl = rotate(&fit, 0, 0, sign * 0.1 * seed as f64);
                    let shift = sign * 0.05 * p.diam;
                    if let Some(nu) = pl.normals.first() {
                        for i in 0..s {
                            pl.origin[i] += shift * nu[i];
                        }
                    }
                    pl
                }
            };
            for _ in 0..self.opts.max_iter {
                let w: Vec<f64> = p
                    .xs
                    .iter()
                    .zip(&p.w)
                    .map(|(x, w)| w * plane.dist(x).max(floor).powf(q - 2.0))
                    .collect();
                plane = pca_fit(&p.xs, &w, s, k);
                let v = lq_of(&plane, p, q);
                if v < best.1 {
                    best = (plane.clone(), v);
                }
            }
        }
        best
    }

    /// `β(Q) = β_∞(Q)` by orientation search from the least-squares fit.
    pub fn sup(&self, id: usize) -> Result<BetaValue> {
        let p = self.patch(id)?;
        let (value, minimizer) = match self.family {
            PlaneFamily::ExplicitSets(sets) => {
                let (j, v) = best_set(sets, |a| sup_dist(&p, |x| a.dist_to(x), self.tree) / p.diam.max(f64::MIN_POSITIVE));
                (if p.diam == 0.0 { 0.0 } else { v }, Minimizer::Set(j))
            }
            _ => {
                let c = self.sup_candidates(&p);
                (c.best_value, Minimizer::Plane(c.best))
            }
        };
        Ok(self.value(id, BetaKind::Sup, f64::INFINITY, value, minimizer, self.family.shape().is_some(), &p))
    }

    /// `β̃(Q)`: the sup-number over planes through `x_Q` only.
    pub fn centered(&self, id: usize) -> Result<BetaValue> {
        let (s, k) = self
            .family
            .shape()
            .ok_or_else(|| Error::invalid("centered β needs a plane family"))?;
        let p = self.patch(id)?;
        let (plane, v) = self.centered_search(&p, s, k);
        Ok(self.value(id, BetaKind::Sup, f64::INFINITY, v, Minimizer::Plane(plane), true, &p))
    }

    /// `bβ(Q)`, adding `sup_{z ∈ A ∩ B(x_Q, κ diam Q)} dist(z, E)`.
    pub fn bilateral(&self, id: usize) -> Result<BetaValue> {
        let p = self.patch(id)?;
        let set = self.tree.set();
        let radius = self.opts.kappa * p.diam;
        let (value, minimizer) = if p.diam == 0.0 {
            let s = set.metric().spatial_dim();
            match (self.family, self.family.shape()) {
                (PlaneFamily::ExplicitSets(_), _) => (0.0, Minimizer::Set(0)),
                (_, Some((_, k))) => (0.0, Minimizer::Plane(through(&p.center[..s], s, k))),
                _ => unreachable!(),
            }
        } else {
            match self.family {
                PlaneFamily::ExplicitSets(sets) => {
                    let (j, v) = best_set(sets, |a| {
                        let first = sup_dist(&p, |x| a.dist_to(x), self.tree);
                        let mut second: f64 = 0.0;
                        a.index().for_each_in_ball(&p.center, radius, |i, _| {
                            second = second.max(set.dist_to(a.point(i)));
                        });
                        (first + second) / p.diam
                    });
                    (v, Minimizer::Set(j))
                }
                _ => {
                    let c = self.sup_candidates(&p);
                    let mut best: Option<(f64, &Plane)> = None;
                    for (plane, first) in &c.pool {
                        let v = first + self.far_side(&p, plane, radius) / p.diam;
                        if best.map_or(true, |b| v < b.0) {
                            best = Some((v, plane));
                        }
                    }
                    let (v, plane) = best.unwrap();
                    (v, Minimizer::Plane(plane.clone()))
                }
            }
        };
        Ok(self.value(id, BetaKind::Bilateral, f64::INFINITY, value, minimizer, self.family.shape().is_some(), &p))
    }

    /// `sup_{z ∈ P ∩ B(x_Q, r)} dist(z, E)`, sampled on projections of the
    /// patch and a regular grid; 0 when nothing of `P` lies in the ball.
    fn far_side(&self, p: &Patch, plane: &Plane, radius: f64) -> f64 {
        let set = self.tree.set();
        let metric = set.metric();
        let s = metric.spatial_dim();
        let parabolic = metric.is_parabolic();
        let mut worst: f64 = 0.0;
        let mut probe = |z: &[f64]| {
            if metric.distance(z, &p.center) <= radius {
                worst = worst.max(set.dist_to(z));
            }
        };
        for &i in &p.idx {
            let y = set.point(i);
            let mut z = plane.project(&y[..s]);
            if parabolic {
                z.push(y[s]);
            }
            probe(&z);
        }
        let foot = plane.project(&p.center[..s]);
        let g = self.opts.grid_steps;
        let mut axes: Vec<(Vec<f64>, f64)> = plane.tangents.iter().map(|t| (t.clone(), radius)).collect();
        if parabolic {
            let mut e = vec![0.0; s + 1];
            e[s] = 1.0;
            axes.push((e, radius * radius));
        }
        let steps = if axes.len() > 2 { g.min(5) } else { g };
        let total = steps.pow(axes.len() as u32);
        for code in 0..total {
            let mut z = foot.clone();
            if parabolic {
                z.push(p.center[s]);
            }
            let mut c = code;
            for (axis, half) in &axes {
                let j = c % steps;
                c /= steps;
                let u = -half + 2.0 * half * j as f64 / (steps - 1) as f64;
                for (zi, ai) in z.iter_mut().zip(axis) {
                    *zi += u * ai;
                }
            }
            probe(&z);
        }
        worst
    }

    fn sup_candidates(&self, p: &Patch) -> Candidates {
        let (s, k) = self.family.shape().unwrap();
        if p.diam == 0.0 {
            let plane = through(&p.center[..s], s, k);
            return Candidates {
                best: plane.clone(),
                best_value: 0.0,
                pool: vec![(plane, 0.0)],
            };
        }
        let fit = pca_fit(&p.xs, &p.w, s, k);
        let mut pool = Vec::new();
        let seeded = centre_offset(&p.xs, fit);
        let v0 = slab(&p.xs, &seeded) / p.diam;
        pool.push((seeded.clone(), v0));
        let (searched, v1) = self.search(seeded, v0, |frame| {
            let pl = centre_offset(&p.xs, frame.clone());
            let v = slab(&p.xs, &pl) / p.diam;
            (pl, v)
        });
        pool.push((searched, v1));
        let (through_center, _) = self.centered_search(p, s, k);
        let freed = centre_offset(&p.xs, through_center.clone());
        let v2 = slab(&p.xs, &freed) / p.diam;
        pool.push((freed, v2));
        let v3 = slab(&p.xs, &through_center) / p.diam;
        pool.push((through_center, v3));
        let (best, best_value) = pool
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(pl, v)| (pl.clone(), *v))
            .unwrap();
        Candidates { best, best_value, pool }
    }

    fn centered_search(&self, p: &Patch, s: usize, k: usize) -> (Plane, f64) {
        if p.diam == 0.0 {
            return (through(&p.center[..s], s, k), 0.0);
        }
        let mut fit = pca_fit(&p.xs, &p.w, s, k);
        fit.origin = p.center[..s].to_vec();
        let v0 = slab(&p.xs, &fit) / p.diam;
        self.search(fit, v0, |frame| {
            let v = slab(&p.xs, frame) / p.diam;
            (frame.clone(), v)
        })
    }

    /// Pattern search over rotations in every tangent/normal plane.
    fn search(&self, start: Plane, v0: f64, eval: impl Fn(&Plane) -> (Plane, f64)) -> (Plane, f64) {
        let mut best = (start, v0);
        let k = best.0.tangents.len();
        let c = best.0.normals.len();
        if k == 0 {
            return best;
        }
        let mut step = 0.25;
        let mut evals = 0;
        while step > 1e-4 && evals < 40 * self.opts.max_iter {
            let mut improved: Option<(Plane, f64)> = None;
            for i in 0..k {
                for j in 0..c {
                    for sign in [1.0, -1.0] {
                        let cand = rotate(&best.0, i, j, sign * step);
                        let (pl, v) = eval(&cand);
                        evals += 1;
                        if v < improved.as_ref().map_or(best.1, |b| b.1) * (1.0 - 1e-12) {
                            improved = Some((pl, v));
                        }
                    }
                }
            }
            match improved {
                Some(b) => best = b,
                None => step *= 0.5,
            }
        }
        best
    }

    /// Per-cube values of one kind, in cube order.
    pub fn table(&self, kind: BetaKind, q: f64) -> Result<Vec<BetaValue>> {
        (0..self.tree.len())
            .into_par_iter()
            .map(|id| match kind {
                BetaKind::Lq => self.lq(id, q),
                BetaKind::Sup => self.sup(id),
                BetaKind::Bilateral => self.bilateral(id),
            })
            .collect()
    }
}

struct Candidates {
    best: Plane,
    best_value: f64,
    /// Every plane evaluated as a final candidate, with its sup-number.
    pool: Vec<(Plane, f64)>,
}

fn lq_value(sum: f64, mu_q: f64, diam: f64, q: f64) -> f64 {
    if diam == 0.0 {
        0.0
    } else {
        (sum / mu_q).powf(1.0 / q) / diam
    }
}

fn lq_of(plane: &Plane, p: &Patch, q: f64) -> f64 {
    let s: f64 = p.xs.iter().zip(&p.w).map(|(x, w)| w * plane.dist(x).powf(q)).sum();
    lq_value(s, p.mu_q, p.diam, q)
}

fn sup_dist(p: &Patch, dist: impl Fn(&[f64]) -> f64, tree: &DyadicTree) -> f64 {
    p.idx.iter().map(|&i| dist(tree.set().point(i))).fold(0.0, f64::max)
}

fn best_set(sets: &[WeightedSet], f: impl Fn(&WeightedSet) -> f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, a) in sets.iter().enumerate() {
        let v = f(a);
        if v < best.1 {
            best = (j, v);
        }
    }
    best
}

/// Largest distance from the patch to the plane.
fn slab(xs: &[Vec<f64>], plane: &Plane) -> f64 {
    xs.iter().map(|x| plane.dist(x)).fold(0.0, f64::max)
}

/// Moves the origin to the centre of the smallest ball holding the patch's
/// normal coordinates: the exact slab midpoint for hyperplanes.
fn centre_offset(xs: &[Vec<f64>], mut plane: Plane) -> Plane {
    let c = plane.normals.len();
    let coords: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            plane
                .normals
                .iter()
                .map(|nu| nu.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let centre: Vec<f64> = if c == 1 {
        let (lo, hi) = coords
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[0]), hi.max(v[0])));
        vec![0.5 * (lo + hi)]
    } else {
        // Badoiu–Clarkson iteration
        let mut ctr = coords[0].clone();
        for it in 1..=400 {
            let far = coords
                .iter()
                .max_by(|a, b| sq(a, &ctr).partial_cmp(&sq(b, &ctr)).unwrap())
                .unwrap();
            let t = 1.0 / (it as f64 + 1.0);
            for (ci, fi) in ctr.iter_mut().zip(far) {
                *ci += t * (fi - *ci);
            }
        }
        ctr
    };
    // origin = Σ_j centre_j ν_j + tangential part of the old origin
    let s = plane.origin.len();
    let mut origin = plane.origin.clone();
    for (nu, &cj) in plane.normals.iter().zip(&centre) {
        let h: f64 = nu.iter().zip(&origin).map(|(a, b)| a * b).sum();
        for i in 0..s {
            origin[i] += (cj - h) * nu[i];
        }
    }
    plane.origin = origin;
    plane
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Rotates tangent `i` towards normal `j` by `angle`.
fn rotate(plane: &Plane, i: usize, j: usize, angle: f64) -> Plane {
    let mut out = plane.clone();
    if plane.tangents.is_empty() || plane.normals.is_empty() {
        return out;
    }
    let (c, s) = (angle.cos(), angle.sin());
    let t = &plane.tangents[i];
    let n = &plane.normals[j];
    out.tangents[i] = t.iter().zip(n).map(|(a, b)| c * a + s * b).collect();
    out.normals[j] = t.iter().zip(n).map(|(a, b)| -s * a + c * b).collect();
    out
}

/// A `k`-plane through `x` along the first coordinate axes.
fn through(x: &[f64], s: usize, k: usize) -> Plane {
    let e = |i: usize| {
        let mut v = vec![0.0; s];
        v[i] = 1.0;
        v
    };
    Plane {
        origin: x.to_vec(),
        tangents: (0..k).map(e).collect(),
        normals: (k..s).map(e).collect(),
    }
}

/// Weighted least-squares `k`-plane: centroid plus the top principal axes.
fn pca_fit(xs: &[Vec<f64>], w: &[f64], s: usize, k: usize) -> Plane {
    let total: f64 = w.iter().sum();
    let mut mean = vec![0.0; s];
    for (x, wi) in xs.iter().zip(w) {
        for i in 0..s {
            mean[i] += wi * x[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = DMatrix::<f64>::zeros(s, s);
    for (x, wi) in xs.iter().zip(w) {
        for a in 0..s {
            let da = x[a] - mean[a];
            for b in 0..s {
                cov[(a, b)] += wi * da * (x[b] - mean[b]);
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap().then(a.cmp(&b)));
    let col = |j: usize| -> Vec<f64> {
        let v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        // fix the sign so fits are reproducible
        let lead = v.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() + 1e-12 { x } else { m });
        if lead < 0.0 {
            v.iter().map(|x| -x).collect()
        } else {
            v
        }
    };
    Plane {
        origin: mean,
        tangents: order[..k].iter().map(|&j| col(j)).collect(),
        normals: order[k..].iter().map(|&j| col(j)).collect(),
    }
}

pub fn beta_q(tree: &DyadicTree, id: usize, family: &PlaneFamily, q: f64) -> Result<BetaValue> {
    Beta::new(tree, family)?.lq(id, q)
}

pub fn beta_inf(tree: &DyadicTree, id: usize, family: &PlaneFamily) -> Result<BetaValue> {
    Beta::new(tree, family)?.sup(id)
}

pub fn bbeta(tree: &DyadicTree, id: usize, family: &PlaneFamily) -> Result<BetaValue> {
    Beta::new(tree, family)?.bilateral(id)
}

/// Writes `cube_id,k,q,beta,plane_params...` rows.
pub fn write_beta_csv(tree: &DyadicTree, values: &[BetaValue], w: impl Write) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    let width = values
        .iter()
        .map(|v| match &v.minimizer {
            Minimizer::Plane(p) => p.params().len(),
            Minimizer::Set(_) => 1,
        })
        .max()
        .unwrap_or(0);
    let mut header = vec!["cube_id".to_string(), "k".into(), "q".into(), "beta".into()];
    header.extend((0..width).map(|i| format!("param{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for v in values {
        let q = if v.q.is_finite() { v.q.to_string() } else { "inf".into() };
        let mut row = vec![v.cube.to_string(), tree.cube(v.cube).k.to_string(), q, v.value.to_string()];
        match &v.minimizer {
            Minimizer::Plane(p) => row.extend(p.params().iter().map(|x| x.to_string())),
            Minimizer::Set(j) => row.push(j.to_string()),
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Rejects `(p, q)` with `1/q − 1/p + 1/d ≤ 0`; returns the gate value.
pub fn pq_gate(p: f64, q: f64, d: f64) -> Result<f64> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::invalid(format!("p = {p} must be finite and positive")));
    }
    if !(q > 0.0) {
        return Err(Error::invalid(format!("q = {q} must be positive")));
    }
    let g = 1.0 / q - 1.0 / p + 1.0 / d;
    if g <= 0.0 {
        return Err(Error::invalid(format!(
            "(p, q) = ({p}, {q}) fails 1/q - 1/p + 1/d > 0 with d = {d}: the value is {g}"
        )));
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub worst_ratio: f64,
    pub witness: Option<usize>,
    pub bound: f64,
    pub pass: bool,
}

impl From<PackingReport> for LemmaReport {
    fn from(r: PackingReport) -> Self {
        LemmaReport {
            worst_ratio: r.worst_ratio,
            witness: r.witness,
            bound: r.bound,
            pass: r.pass,
        }
    }
}

/// `sup_R Σ_{Q ⊆ R} β(Q)^p μ(Q) / μ(R)` from per-cube values.
pub fn glem_from_values(tree: &DyadicTree, values: &[f64], p: f64, m: f64) -> Result<LemmaReport> {
    if values.len() != tree.len() {
        return Err(Error::invalid("one β value per cube expected"));
    }
    let alpha = values.iter().enumerate().map(|(q, b)| b.powf(p) * tree.mass(q)).collect();
    let NormReport { value, witness } = carleson_norm(tree, &DiscreteMeasure::new(tree, alpha)?, &[], None)?;
    Ok(LemmaReport {
        worst_ratio: value,
        witness,
        bound: m,
        pass: value <= m * (1.0 + ROUNDING),
    })
}

/// Packing of `{Q : value(Q) > ε}` against `M_ε`.
pub fn weak_from_values(tree: &DyadicTree, values: &[f64], eps: f64, m_eps: f64) -> LemmaReport {
    let marked: Vec<usize> = (0..tree.len()).filter(|&q| values[q] > eps).collect();
    packing_check(tree, &marked, m_eps).into()
}

/// The `(p, q)` geometric lemma with constant `M`.
pub fn glem_check(tree: &DyadicTree, family: &PlaneFamily, p: f64, q: f64, m: f64) -> Result<LemmaReport> {
    pq_gate(p, q, tree.set().dim_d())?;
    let b = Beta::new(tree, family)?;
    let vals = if q.is_finite() { b.table(BetaKind::Lq, q)? } else { b.table(BetaKind::Sup, q)? };
    glem_from_values(tree, &vals.iter().map(|v| v.value).collect::<Vec<_>>(), p, m)
}

pub fn wglem_check(tree: &DyadicTree, family: &PlaneFamily, eps: f64, m_eps: f64) -> Result<LemmaReport> {
    let vals = Beta::new(tree, family)?.table(BetaKind::Sup, f64::INFINITY)?;
    Ok(weak_from_values(tree, &vals.iter().map(|v| v.value).collect::<Vec<_>>(), eps, m_eps))
}

pub fn bwglem_check(tree: &DyadicTree, family: &PlaneFamily, eps: f64, m_eps: f64) -> Result<LemmaReport> {
    let vals = Beta::new(tree, family)?.table(BetaKind::Bilateral, f64::INFINITY)?;
    Ok(weak_from_values(tree, &vals.iter().map(|v| v.value).collect::<Vec<_>>(), eps, m_eps))
}

/// `I_q(Q)` of a cube of `tree` relative to `E₃`, from `dists[i] = dist(x_i, E₃)`.
/// Distances at most `floor` count as zero.
pub fn i_numbers_cached(tree: &DyadicTree, dists: &[f64], id: usize, q: f64, kappa: f64, floor: f64) -> Result<f64> {
    let diam = tree.diam(id);
    if diam == 0.0 {
        return Ok(0.0);
    }
    let set = tree.set();
    let mut sum = 0.0;
    let mut sup: f64 = 0.0;
    for i in dilate(tree, id, kappa)? {
        let d = dists[i];
        if d <= floor || d >= 2.0 * diam {
            continue;
        }
        let r = d / diam;
        if q.is_finite() {
            sum += set.weight(i) * r.powf(q);
        } else {
            sup = sup.max(r);
        }
    }
    Ok(if q.is_finite() { (sum / tree.mass(id)).powf(1.0 / q) } else { sup })
}

pub fn i_numbers(tree: &DyadicTree, e3: &WeightedSet, id: usize, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::invalid(format!("q = {q} must be positive")));
    }
    let dists = distance_cache(tree.set(), e3);
    i_numbers_cached(tree, &dists, id, q, 2.0, 0.0)
}

/// Points of `tree`'s set within `δ` of `Q` that lie on the other set, as
/// indices into `other`.
fn meeting_points(tree: &DyadicTree, other: &WeightedSet, id: usize, delta: f64) -> Vec<usize> {
    let set = tree.set();
    let mut hits = Vec::new();
    for &i in &tree.cube(id).members {
        other.index().for_each_in_ball(set.point(i), delta, |j, _| hits.push(j));
    }
    hits.sort_unstable();
    hits.dedup();
    hits
}

/// A cube of `𝔻(Ẽ)` meeting `Q` with `10 diam Q ≤ diam Q̃ ≤ C₂ diam Q`: the
/// finest admissible level, ties to the smaller id.
pub fn companion_cube(tree: &DyadicTree, tilde: &DyadicTree, id: usize, c2: f64) -> Result<usize> {
    let delta = delta_match(tree.set());
    companion_with(tree, tilde, id, c2, &meeting_points(tree, tilde.set(), id, delta))
}

fn companion_with(tree: &DyadicTree, tilde: &DyadicTree, id: usize, c2: f64, hits: &[usize]) -> Result<usize> {
    if hits.is_empty() {
        return Err(Error::invalid(format!("cube {id} misses the comparison set")));
    }
    let d = tree.diam(id);
    let (lo, hi) = (10.0 * d, c2 * d);
    for k in (tilde.k_min()..=tilde.k_max()).rev() {
        let mut cands: Vec<usize> = hits.iter().map(|&z| tilde.cube_of_point(z, k)).collect();
        cands.sort_unstable();
        cands.dedup();
        if let Some(&c) = cands.iter().find(|&&c| {
            let dc = tilde.diam(c);
            dc >= lo && dc <= hi
        }) {
            return Ok(c);
        }
    }
    Err(Error::Contract(format!(
        "no cube of the comparison tree meets cube {id} with diameter in [{lo}, {hi}]"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub p: f64,
    pub q: f64,
    pub eps: f64,
    pub theta: f64,
    pub c2: f64,
    /// Cap on every measured comparison constant.
    pub constant_cap: f64,
    pub glem_bound: f64,
    pub weak_bound: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            p: 2.0,
            q: 2.0,
            eps: 0.1,
            theta: 0.1,
            c2: 64.0,
            constant_cap: 100.0,
            glem_bound: f64::INFINITY,
            weak_bound: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CubeTransfer {
    pub cube: usize,
    pub root: usize,
    pub approximant: usize,
    pub companion: usize,
    pub diam_ratio: f64,
    pub beta_q: Option<f64>,
    pub beta_q_tilde: Option<f64>,
    pub i_q: Option<f64>,
    pub beta: f64,
    pub beta_tilde: f64,
    pub i_inf: f64,
    pub bbeta: f64,
    pub bbeta_tilde: f64,
    pub i_inf_tilde: f64,
    pub ratio_q: Option<f64>,
    pub ratio_inf: f64,
    pub ratio_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootTransfer {
    pub root: usize,
    pub approximant: usize,
    pub theta: f64,
    pub eligible: usize,
    /// Cubes meeting the piece with no admissible companion in the window.
    pub window_skipped: usize,
    pub missing: usize,
    pub max_multiplicity: usize,
    /// `sup_{R'} Σ_{Q ⊆ R'} I_q(Q)^q μ(Q)/μ(R')` inside this root.
    pub i_carleson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberLemmas {
    pub approximant: usize,
    pub glem: LemmaReport,
    pub wglem: LemmaReport,
    pub bwglem: LemmaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub config: TransferConfig,
    pub family: String,
    pub gate: f64,
    pub roots: Vec<RootTransfer>,
    pub cubes: Vec<CubeTransfer>,
    pub constant_q: Option<f64>,
    pub constant_inf: f64,
    pub constant_b: f64,
    pub i_carleson: f64,
    pub glem: LemmaReport,
    pub wglem: LemmaReport,
    pub bwglem: LemmaReport,
    pub members: Vec<MemberLemmas>,
    pub pass: bool,
}

impl TransferReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn values(v: &[BetaValue]) -> Vec<f64> {
    v.iter().map(|b| b.value).collect()
}

/// Empirical comparison between the β-numbers of `E` and those of the big
/// pieces carried by each root, then the inherited Carleson conditions.
pub fn transfer_check(
    tree: &DyadicTree,
    catalog: &ApproximantCatalog,
    family: &PlaneFamily,
    cfg: &TransferConfig,
) -> Result<TransferReport> {
    let set = tree.set();
    let gate = pq_gate(cfg.p, cfg.q, set.dim_d())?;
    if !(cfg.eps > 0.0 && cfg.c2 > 10.0) {
        return Err(Error::invalid("need ε > 0 and C₂ > 10"));
    }
    let on = lies_on(set, catalog);
    let bp = bp_check_with(tree, &on, cfg.theta)?;
    if let Some(c) = bp.failure {
        return Err(Error::Contract(format!(
            "set is not BP(catalog) with θ = {}: cube {c} reaches {}",
            cfg.theta, bp.witnesses[c].theta_achieved
        )));
    }
    let delta = delta_match(set);
    let qf = cfg.q.is_finite();

    let b = Beta::new(tree, family)?;
    let lq = if qf { Some(b.table(BetaKind::Lq, cfg.q)?) } else { None };
    let sup = b.table(BetaKind::Sup, f64::INFINITY)?;
    let bil = b.table(BetaKind::Bilateral, f64::INFINITY)?;

    let mut used: Vec<usize> = tree.roots().iter().map(|&r| bp.witnesses[r].approximant_id).collect();
    used.sort_unstable();
    used.dedup();
    struct Member {
        tree: DyadicTree,
        /// `dist(x, Ẽ)` for points of `E`.
        to_piece: Vec<f64>,
        /// `dist(z, E)` for points of `Ẽ`.
        to_set: Vec<f64>,
    }
    let mut members: BTreeMap<usize, Member> = BTreeMap::new();
    for &j in &used {
        let g = catalog.get(j);
        members.insert(
            j,
            Member {
                tree: build_tree(g).map_err(|e| e.in_stage("comparison tree"))?,
                to_piece: distance_cache(set, g),
                to_set: distance_cache(g, set),
            },
        );
    }

    let mut roots = Vec::new();
    let mut cubes = Vec::new();
    let mut member_lemmas = Vec::new();
    for (&j, m) in &members {
        let tb = Beta::new(&m.tree, family)?;
        let piece_delta = delta.max(delta_match(m.tree.set()));
        let my_roots: Vec<usize> = tree
            .roots()
            .iter()
            .copied()
            .filter(|&r| bp.witnesses[r].approximant_id == j)
            .collect();
        let mut tilde_cache: BTreeMap<usize, (Option<f64>, f64, f64, f64)> = BTreeMap::new();
        for &r in &my_roots {
            let mut rt = RootTransfer {
                root: r,
                approximant: j,
                theta: bp.witnesses[r].theta_achieved,
                eligible: 0,
                window_skipped: 0,
                missing: 0,
                max_multiplicity: 0,
                i_carleson: 0.0,
            };
            let mut chosen: BTreeMap<usize, usize> = BTreeMap::new();
            for q in tree.descendants(r) {
                let iq = i_numbers_cached(tree, &m.to_piece, q, if qf { cfg.q } else { f64::INFINITY }, 2.0, delta)?;
                let hits = meeting_points(tree, m.tree.set(), q, delta);
                if hits.is_empty() {
                    rt.missing += 1;
                    continue;
                }
                let qt = match companion_with(tree, &m.tree, q, cfg.c2, &hits) {
                    Ok(c) => c,
                    Err(Error::Contract(_)) => {
                        rt.window_skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                *chosen.entry(qt).or_default() += 1;
                rt.eligible += 1;
                let tilde = match tilde_cache.get(&qt) {
                    Some(t) => *t,
                    None => {
                        let t = (
                            if qf { Some(tb.lq(qt, cfg.q)?.value) } else { None },
                            tb.sup(qt)?.value,
                            tb.bilateral(qt)?.value,
                            i_numbers_cached(&m.tree, &m.to_set, qt, f64::INFINITY, 2.0, piece_delta)?,
                        );
                        tilde_cache.insert(qt, t);
                        t
                    }
                };
                let i_inf = i_numbers_cached(tree, &m.to_piece, q, f64::INFINITY, 2.0, delta)?;
                let diam = tree.diam(q);
                let tau = if diam > 0.0 { delta / diam } else { 0.0 };
                let ratio = |lhs: f64, rhs: f64| if lhs <= tau { 0.0 } else { lhs / (rhs + tau) };
                let (bq, bqt, iqv) = if qf { (Some(lq.as_ref().unwrap()[q].value), tilde.0, Some(iq)) } else { (None, None, None) };
                cubes.push(CubeTransfer {
                    cube: q,
                    root: r,
                    approximant: j,
                    companion: qt,
                    diam_ratio: m.tree.diam(qt) / diam.max(f64::MIN_POSITIVE),
                    beta_q: bq,
                    beta_q_tilde: bqt,
                    i_q: iqv,
                    beta: sup[q].value,
                    beta_tilde: tilde.1,
                    i_inf,
                    bbeta: bil[q].value,
                    bbeta_tilde: tilde.2,
                    i_inf_tilde: tilde.3,
                    ratio_q: if qf { Some(ratio(bq.unwrap(), bqt.unwrap() + iq)) } else { None },
                    ratio_inf: ratio(sup[q].value, tilde.1 + i_inf),
                    ratio_b: ratio(bil[q].value, tilde.2 + i_inf + tilde.3),
                });
            }
            rt.max_multiplicity = chosen.values().copied().max().unwrap_or(0);
            roots.push(rt);
        }
        let tq = if qf { tb.table(BetaKind::Lq, cfg.q)? } else { tb.table(BetaKind::Sup, cfg.q)? };
        let tsup = tb.table(BetaKind::Sup, f64::INFINITY)?;
        let tbil = tb.table(BetaKind::Bilateral, f64::INFINITY)?;
        member_lemmas.push(MemberLemmas {
            approximant: j,
            glem: glem_from_values(&m.tree, &values(&tq), cfg.p, cfg.glem_bound)?,
            wglem: weak_from_values(&m.tree, &values(&tsup), cfg.eps, cfg.weak_bound),
            bwglem: weak_from_values(&m.tree, &values(&tbil), cfg.eps, cfg.weak_bound),
        });
    }

    for rt in roots.iter_mut() {
        let alpha = cubes_alpha(tree, rt.root, &members[&rt.approximant].to_piece, cfg, delta)?;
        let sums = subtree_sums(tree, &DiscreteMeasure::new(tree, alpha)?, &[]);
        rt.i_carleson = tree
            .descendants(rt.root)
            .into_iter()
            .filter(|&q| tree.mass(q) > 0.0)
            .map(|q| sums[q] / tree.mass(q))
            .fold(0.0, f64::max);
    }

    let i_carleson = roots.iter().map(|r| r.i_carleson).fold(0.0, f64::max);
    let fold = |f: fn(&CubeTransfer) -> f64| cubes.iter().map(f).fold(0.0, f64::max);
    let constant_q = if qf { Some(fold(|c| c.ratio_q.unwrap())) } else { None };
    let constant_inf = fold(|c| c.ratio_inf);
    let constant_b = fold(|c| c.ratio_b);
    let glem = glem_from_values(tree, &values(lq.as_ref().unwrap_or(&sup)), cfg.p, cfg.glem_bound)?;
    let wglem = weak_from_values(tree, &values(&sup), cfg.eps, cfg.weak_bound);
    let bwglem = weak_from_values(tree, &values(&bil), cfg.eps, cfg.weak_bound);
    let cap = cfg.constant_cap;
    let pass = constant_q.map_or(true, |c| c.is_finite() && c <= cap)
        && constant_inf.is_finite()
        && constant_inf <= cap
        && constant_b.is_finite()
        && constant_b <= cap
        && glem.pass
        && wglem.pass
        && bwglem.pass;
    Ok(TransferReport {
        config: *cfg,
        family: family.name(),
        gate,
        roots,
        cubes,
        constant_q,
        constant_inf,
        constant_b,
        i_carleson,
        glem,
        wglem,
        bwglem,
        members: member_lemmas,
        pass,
    })
}

/// `I_q(Q)^q μ(Q)` on the cubes under `root`, zero elsewhere.
fn cubes_alpha(tree: &DyadicTree, root: usize, dists: &[f64], cfg: &TransferConfig, delta: f64) -> Result<Vec<f64>> {
    let mut alpha = vec![0.0; tree.len()];
    if !cfg.q.is_finite() {
        return Ok(alpha);
    }
    for q in tree.descendants(root) {
        alpha[q] = i_numbers_cached(tree, dists, q, cfg.q, 2.0, delta)?.powf(cfg.q) * tree.mass(q);
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests;
