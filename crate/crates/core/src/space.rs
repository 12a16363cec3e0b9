//! Weighted point clouds standing in for a regular set and its measure.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::KdTree;
use crate::metric::Metric;

/// Finite cloud `E` with point masses `μ`, a regularity dimension and the
/// band of radii at which the cloud resolves the underlying set.
#[derive(Debug, Clone)]
pub struct WeightedSet {
    metric: Metric,
    dim_d: f64,
    scale_range: (f64, f64),
    coords: Vec<f64>,
    weights: Vec<f64>,
    index: Arc<KdTree>,
}

/// JSON sidecar describing a CSV point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(flatten)]
    pub metric: Metric,
    pub d: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl WeightedSet {
    /// Builds a cloud and checks every structural invariant, including that
    /// `r_min` is at least twice the largest nearest-neighbour distance.
    pub fn new(
        metric: Metric,
        coords: Vec<f64>,
        weights: Vec<f64>,
        dim_d: f64,
        scale_range: (f64, f64),
    ) -> Result<Self> {
        let set = Self::assemble(metric, coords, weights, dim_d, scale_range)?;
        let nn = set.max_nn_distance();
        if set.len() > 1 && scale_range.0 < 2.0 * nn * (1.0 - 1e-9) {
            return Err(Error::invalid(format!(
                "r_min = {} is below twice the largest nearest-neighbour distance {}",
                scale_range.0, nn
            )));
        }
        Ok(set)
    }

    /// Builds a cloud checking weights and ranges but not the resolution bound.
    /// Sub-clouds (localizations, unions) go through here.
    pub fn assemble(
        metric: Metric,
        coords: Vec<f64>,
        weights: Vec<f64>,
        dim_d: f64,
        scale_range: (f64, f64),
    ) -> Result<Self> {
        let dim = metric.dim();
        if dim == 0 || coords.len() != weights.len() * dim {
            return Err(Error::invalid(format!(
                "{} coordinates do not match {} points of dimension {}",
                coords.len(),
                weights.len(),
                dim
            )));
        }
        if weights.is_empty() {
            return Err(Error::invalid("empty point cloud"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(format!("weight {w} is not strictly positive")));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        if !(dim_d > 0.0 && dim_d.is_finite()) {
            return Err(Error::invalid(format!("dimension d = {dim_d} must be positive")));
        }
        let (lo, hi) = scale_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::invalid(format!("bad scale range ({lo}, {hi})")));
        }
        let index = Arc::new(KdTree::new(metric, &coords).with_weights(&weights));
        Ok(WeightedSet {
            metric,
            dim_d,
            scale_range,
            coords,
            weights,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn dim_d(&self) -> f64 {
        self.dim_d
    }

    pub fn scale_range(&self) -> (f64, f64) {
        self.scale_range
    }

    pub fn r_min(&self) -> f64 {
        self.scale_range.0
    }

    pub fn r_max(&self) -> f64 {
        self.scale_range.1
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let dim = self.metric.dim();
        &self.coords[i * dim..(i + 1) * dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mass_of(&self, idx: impl IntoIterator<Item = usize>) -> f64 {
        idx.into_iter().map(|i| self.weights[i]).sum()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.metric.distance(self.point(i), self.point(j))
    }

    /// `dist(q, E)`.
    pub fn dist_to(&self, q: &[f64]) -> f64 {
        self.index.nearest(q).map_or(f64::INFINITY, |(_, d)| d)
    }

    /// `μ(B(center, r) ∩ E)` over the closed ball.
    pub fn ball_mass(&self, center: &[f64], r: f64) -> f64 {
        self.index.mass_in_ball(center, r)
    }

    /// Largest distance from a point to its nearest other point.
    pub fn max_nn_distance(&self) -> f64 {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                self.index
                    .nearest_where(self.point(i), f64::INFINITY, |j| j != i)
                    .map_or(0.0, |(_, d)| d)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Smallest distance between two distinct points.
    pub fn min_nn_distance(&self) -> f64 {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                self.index
                    .nearest_where(self.point(i), f64::INFINITY, |j| j != i)
                    .map_or(f64::INFINITY, |(_, d)| d)
            })
            .reduce(|| f64::INFINITY, f64::min)
    }

    pub fn diameter(&self) -> f64 {
        self.index.diameter()
    }

    /// Same points and weights with another scale range.
    pub fn with_scale_range(&self, scale_range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = scale_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::invalid(format!("bad scale range ({lo}, {hi})")));
        }
        let mut out = self.clone();
        out.scale_range = scale_range;
        Ok(out)
    }

    /// Sub-cloud on `idx` (kept in the given order) with the given scale range.
    pub fn subset(&self, idx: &[usize], scale_range: (f64, f64)) -> Result<Self> {
        let mut coords = Vec::with_capacity(idx.len() * self.metric.dim());
        let mut weights = Vec::with_capacity(idx.len());
        for &i in idx {
            coords.extend_from_slice(self.point(i));
            weights.push(self.weights[i]);
        }
        Self::assemble(self.metric, coords, weights, self.dim_d, scale_range)
    }

    /// Applies the intrinsic dilation by `lambda` to points and scale range and
    /// multiplies weights by `lambda^d`.
    pub fn dilated(&self, lambda: f64) -> Result<Self> {
        let dim = self.metric.dim();
        let mut coords = self.coords.clone();
        for p in coords.chunks_mut(dim) {
            self.metric.dilate_point(p, lambda);
        }
        let f = lambda.powf(self.dim_d);
        let weights = self.weights.iter().map(|w| w * f).collect();
        Self::assemble(
            self.metric,
            coords,
            weights,
            self.dim_d,
            (self.scale_range.0 * lambda, self.scale_range.1 * lambda),
        )
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            metric: self.metric,
            d: self.dim_d,
            r_min: self.scale_range.0,
            r_max: self.scale_range.1,
        }
    }

    /// Writes `stem.csv` and `stem.json`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(stem.with_extension("csv"))
            .map_err(|e| Error::Parse(e.to_string()))?;
        wtr.write_record(header(self.metric))
            .map_err(|e| Error::Parse(e.to_string()))?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.point(i).iter().map(|c| format!("{c:?}")).collect();
            row.push(format!("{:?}", self.weights[i]));
            wtr.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
        }
        wtr.flush()?;
        std::fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&self.sidecar())?,
        )?;
        Ok(())
    }

    /// Reads a cloud from `stem.csv` plus `stem.json`, checking all invariants.
    pub fn read(stem: &Path) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let dim = side.metric.dim();
        let mut rdr = csv::Reader::from_path(stem.with_extension("csv"))
            .map_err(|e| Error::Parse(e.to_string()))?;
        let head = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let expect = header(side.metric);
        if head.iter().map(str::trim).ne(expect.iter().map(String::as_str)) {
            return Err(Error::Parse(format!(
                "header {:?} does not match {:?}",
                head.iter().collect::<Vec<_>>(),
                expect
            )));
        }
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != dim + 1 {
                return Err(Error::Parse(format!("row {} has {} fields", line + 2, rec.len())));
            }
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad number {field:?}", line + 2)))?;
                if k < dim {
                    coords.push(v);
                } else {
                    weights.push(v);
                }
            }
        }
        Self::new(side.metric, coords, weights, side.d, (side.r_min, side.r_max))
    }
}

fn header(metric: Metric) -> Vec<String> {
    let mut h: Vec<String> = (1..=metric.spatial_dim()).map(|i| format!("x{i}")).collect();
    if metric.is_parabolic() {
        h.push("t".into());
    }
    h.push("w".into());
    h
}

/// Radii `lo·(hi/lo)^{j/m}`, `j = 0..=m`, with `m` chosen for at most
/// `per_octave` radii per doubling.
pub fn log_radii(lo: f64, hi: f64, per_octave: usize) -> Vec<f64> {
    let m = ((hi / lo).log2() * per_octave as f64).ceil().max(1.0) as usize;
    (0..=m)
        .map(|j| {
            if j == m {
                hi
            } else {
                lo * (hi / lo).powf(j as f64 / m as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstBall {
    pub center: usize,
    pub radius: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleStat {
    pub radius: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Measured two-sided regularity constant of a cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub constant_c: f64,
    pub worst_ball: WorstBall,
    pub per_scale_stats: Vec<ScaleStat>,
    pub dim_d: f64,
    pub scale_range: (f64, f64),
    pub diameter: f64,
}

impl RegularityReport {
    pub fn lower(&self) -> f64 {
        self.per_scale_stats
            .iter()
            .map(|s| s.min_ratio)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn upper(&self) -> f64 {
        self.per_scale_stats.iter().map(|s| s.max_ratio).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegularityOptions {
    pub radii_per_octave: usize,
    /// Use every point as a center when `None`, otherwise an evenly strided sample.
    pub max_centers: Option<usize>,
    /// Overrides the cloud's own scale range.
    pub scale_range: Option<(f64, f64)>,
}

impl Default for RegularityOptions {
    fn default() -> Self {
        RegularityOptions {
            radii_per_octave: 8,
            max_centers: None,
            scale_range: None,
        }
    }
}

/// Evenly strided sample of at most `max` indices out of `0..n`.
pub fn strided_sample(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n && m > 0 => (0..m).map(|j| j * n / m).collect(),
        _ => (0..n).collect(),
    }
}

pub fn regularity_check(set: &WeightedSet) -> Result<RegularityReport> {
    regularity_check_with(set, &RegularityOptions::default())
}

/// Smallest `C` with `C⁻¹ ≤ μ(B(x,r))/rᵈ ≤ C` over the sampled centers and the
/// logarithmic radius grid.
///
/// Fails when some center carries the same mass at every sampled radius
/// (an isolated atom: the lower bound must break as `r` grows) or when a
/// ratio is zero or not finite.
pub fn regularity_check_with(set: &WeightedSet, opts: &RegularityOptions) -> Result<RegularityReport> {
    let (lo, hi) = opts.scale_range.unwrap_or(set.scale_range);
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::invalid(format!("bad scale range ({lo}, {hi})")));
    }
    let radii = log_radii(lo, hi, opts.radii_per_octave.max(1));
    let centers = strided_sample(set.len(), opts.max_centers);
    let d = set.dim_d;
    let masses: Vec<Vec<f64>> = centers
        .par_iter()
        .map(|&c| radii.iter().map(|&r| set.ball_mass(set.point(c), r)).collect())
        .collect();

    let mut stats: Vec<ScaleStat> = radii
        .iter()
        .map(|&r| ScaleStat {
            radius: r,
            min_ratio: f64::INFINITY,
            max_ratio: 0.0,
        })
        .collect();
    let mut worst = WorstBall {
        center: centers[0],
        radius: radii[0],
        ratio: 1.0,
    };
    let mut worst_badness = 0.0;
    for (ci, &c) in centers.iter().enumerate() {
        let m = &masses[ci];
        if m.len() > 1 && m[0] == m[m.len() - 1] {
            return Err(Error::NotRegular(format!(
                "point {c} carries constant mass {} on every radius in ({lo}, {hi}); \
                 the lower bound fails at r = {hi}",
                m[0]
            )));
        }
        for (j, &r) in radii.iter().enumerate() {
            let ratio = m[j] / r.powf(d);
            if !(ratio.is_finite() && ratio > 0.0) {
                return Err(Error::NotRegular(format!(
                    "ratio {ratio} at point {c}, radius {r}"
                )));
            }
            stats[j].min_ratio = stats[j].min_ratio.min(ratio);
            stats[j].max_ratio = stats[j].max_ratio.max(ratio);
            let badness = ratio.max(1.0 / ratio);
            if badness > worst_badness {
                worst_badness = badness;
                worst = WorstBall {
                    center: c,
                    radius: r,
                    ratio,
                };
            }
        }
    }
    Ok(RegularityReport {
        constant_c: worst_badness,
        worst_ball: worst,
        per_scale_stats: stats,
        dim_d: d,
        scale_range: (lo, hi),
        diameter: set.diameter(),
    })
}

/// Point indices of the localization `E_{x,r}`: starting from `B(x,r) ∩ E`,
/// repeatedly add every point within `2^{-k} r` of a point already present.
pub fn localize_indices(set: &WeightedSet, x: usize, r: f64) -> Result<Vec<usize>> {
    let (lo, hi) = set.scale_range;
    if !(r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!(
            "radius {r} outside scale range ({lo}, {hi})"
        )));
    }
    if x >= set.len() {
        return Err(Error::invalid(format!("point index {x} out of range")));
    }
    let mut inside = vec![false; set.len()];
    let mut frontier = Vec::new();
    set.index.for_each_in_ball(set.point(x), r, |i, _| {
        inside[i] = true;
        frontier.push(i);
    });
    // Every step stays within r + r/2 + r/4 + ... < 2r of x, so only the
    // points of B(x, 2r) can join. Each step tests them against an index of
    // the newest points: those added earlier already had larger balls
    // explored around them.
    let mut pending = Vec::new();
    set.index.for_each_in_ball(set.point(x), 2.0 * r * (1.0 + 1e-9), |i, _| {
        if !inside[i] {
            pending.push(i);
        }
    });
    pending.sort_unstable();
    let cap = (r / lo).log2().ceil().max(0.0) as usize + 4;
    for k in 1..=cap {
        if frontier.is_empty() || pending.is_empty() {
            break;
        }
        let rk = r * 0.5f64.powi(k as i32);
        let coords: Vec<f64> = frontier.iter().flat_map(|&z| set.point(z).iter().copied()).collect();
        let near = KdTree::new(set.metric(), &coords);
        let (added, rest): (Vec<usize>, Vec<usize>) = pending
            .iter()
            .partition(|&&y| near.any_in_ball(set.point(y), rk, |_| true));
        for &y in &added {
            inside[y] = true;
        }
        frontier = added;
        pending = rest;
    }
    Ok((0..set.len()).filter(|&i| inside[i]).collect())
}

/// The localization `E_{x,r}` as a cloud on scales `(r_min, 10r)`.
pub fn localize(set: &WeightedSet, x: usize, r: f64) -> Result<WeightedSet> {
    let idx = localize_indices(set, x, r)?;
    set.subset(&idx, (set.scale_range.0, 10.0 * r))
}

/// Upper regularity constant promised for a localization of a `Reg(C)` set.
pub fn localize_constant(c: f64, d: f64) -> f64 {
    2f64.powf(6.0 * d) * 10f64.powf(d) * c
}

/// Trades scales: a set of diameter `< R` that is regular up to `R` is
/// regular up to `R' ≥ R` with constant `C (R'/R)^d`.
pub fn scale_trade(report: &RegularityReport, r: f64, r_prime: f64) -> Result<RegularityReport> {
    if !(r > 0.0 && r_prime.is_finite()) {
        return Err(Error::invalid(format!("bad radii R = {r}, R' = {r_prime}")));
    }
    if r_prime < r {
        return Err(Error::invalid(format!("R' = {r_prime} is smaller than R = {r}")));
    }
    if report.diameter >= r {
        return Err(Error::invalid(format!(
            "diameter {} is not below R = {r}",
            report.diameter
        )));
    }
    if r > report.scale_range.1 * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "report only covers radii up to {}, not R = {r}",
            report.scale_range.1
        )));
    }
    let mut out = report.clone();
    out.constant_c = report.constant_c * (r_prime / r).powf(report.dim_d);
    out.scale_range = (report.scale_range.0, r_prime);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, h: f64) -> WeightedSet {
        let coords = (0..n).flat_map(|i| [i as f64 * h, 0.0]).collect();
        WeightedSet::new(Metric::Euclidean { n: 2 }, coords, vec![h; n], 1.0, (10.0 * h, 1000.0 * h))
            .unwrap()
    }

    #[test]
    fn ball_mass_trivial_cases() {
        let m = Metric::Euclidean { n: 2 };
        let one = WeightedSet::assemble(m, vec![0.3, 0.4], vec![1.0], 1.0, (1.0, 2.0)).unwrap();
        assert_eq!(one.ball_mass(&[0.3, 0.4], 0.5), 1.0);
        let two = WeightedSet::assemble(m, vec![0.0, 0.0, 3.0, 0.0], vec![1.0, 2.0], 1.0, (1.0, 2.0))
            .unwrap();
        assert_eq!(two.ball_mass(&[0.0, 0.0], 2.0), 1.0);
        assert_eq!(two.ball_mass(&[0.0, 0.0], 3.0), 3.0);
    }

    #[test]
    fn ball_mass_counts_lattice_points() {
        let m = Metric::Euclidean { n: 2 };
        let mut coords = Vec::new();
        for i in 0..=100 {
            for j in 0..=100 {
                coords.extend([i as f64, j as f64]);
            }
        }
        let n = coords.len() / 2;
        let set = WeightedSet::new(m, coords, vec![1.0; n], 2.0, (2.0, 50.0)).unwrap();
        let mut count = 0;
        for i in 40..=60i32 {
            for j in 40..=60i32 {
                if (i - 50) * (i - 50) + (j - 50) * (j - 50) <= 100 {
                    count += 1;
                }
            }
        }
        assert_eq!(set.ball_mass(&[50.0, 50.0], 10.0), count as f64);
    }

    #[test]
    fn resolution_invariant_is_enforced() {
        let m = Metric::Euclidean { n: 1 };
        let err = WeightedSet::new(m, vec![0.0, 1.0, 5.0], vec![1.0; 3], 1.0, (2.0, 10.0));
        assert!(err.is_err());
        assert!(WeightedSet::new(m, vec![0.0, 1.0], vec![1.0, 0.0], 1.0, (2.0, 10.0)).is_err());
    }

    #[test]
    fn straight_line_constant_near_two() {
        let set = line(4000, 0.01);
        let rep = regularity_check(&set).unwrap();
        // interior balls carry 2r, endpoints r
        assert!(rep.constant_c <= 2.0 + 0.2, "C = {}", rep.constant_c);
        // brute-force ratio scan over the same grid
        let radii = log_radii(0.1, 10.0, 8);
        let mut worst: f64 = 0.0;
        for c in (0..4000).step_by(37) {
            for &r in &radii {
                let m: f64 = (0..4000)
                    .filter(|&i| set.distance(c, i) <= r)
                    .map(|i| set.weight(i))
                    .sum();
                let ratio = m / r;
                worst = worst.max(ratio.max(1.0 / ratio));
            }
        }
        assert!(worst <= rep.constant_c + 1e-12);
    }

    #[test]
    fn single_point_is_not_regular() {
        let set =
            WeightedSet::new(Metric::Euclidean { n: 2 }, vec![0.0, 0.0], vec![1.0], 1.0, (1.0, 2.0))
                .unwrap();
        assert!(matches!(regularity_check(&set), Err(Error::NotRegular(_))));
    }

    #[test]
    fn constant_invariant_under_dilation() {
        let set = line(500, 0.01);
        let a = regularity_check(&set).unwrap().constant_c;
        let b = regularity_check(&set.dilated(4.0).unwrap()).unwrap().constant_c;
        assert_eq!(a, b);
    }

    #[test]
    fn localize_sandwich_and_far_line() {
        let h = 0.01;
        let n = 1000;
        let r = 0.5;
        let mut coords: Vec<f64> = (0..n).flat_map(|i| [i as f64 * h, 0.0]).collect();
        coords.extend((0..n).flat_map(|i| [i as f64 * h, 10.0 * r]));
        let set = WeightedSet::new(
            Metric::Euclidean { n: 2 },
            coords,
            vec![h; 2 * n],
            1.0,
            (10.0 * h, 2.0),
        )
        .unwrap();
        let x = 500;
        let idx = localize_indices(&set, x, r).unwrap();
        for i in 0..set.len() {
            let d = set.distance(x, i);
            if d <= r {
                assert!(idx.contains(&i));
            }
        }
        for &i in &idx {
            assert!(set.distance(x, i) <= 3.0 * r);
            assert!(i < n, "second line leaked in");
        }
        assert!(localize_indices(&set, x, 5.0).is_err());
    }

    #[test]
    fn scale_trade_values() {
        let rep = RegularityReport {
            constant_c: 4.0,
            worst_ball: WorstBall {
                center: 0,
                radius: 1.0,
                ratio: 4.0,
            },
            per_scale_stats: vec![],
            dim_d: 2.0,
            scale_range: (0.1, 1.0),
            diameter: 0.5,
        };
        assert_eq!(scale_trade(&rep, 1.0, 1.0).unwrap().constant_c, 4.0);
        let t = scale_trade(&rep, 1.0, 2.0).unwrap();
        assert_eq!(t.constant_c, 16.0);
        assert_eq!(t.scale_range, (0.1, 2.0));
        assert!(scale_trade(&rep, 1.0, 0.5).is_err());
        assert!(scale_trade(&rep, 0.4, 0.8).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("cloud");
        let set = line(50, 0.1);
        set.write(&stem).unwrap();
        let back = WeightedSet::read(&stem).unwrap();
        assert_eq!(back.coords(), set.coords());
        assert_eq!(back.weights(), set.weights());
        assert_eq!(back.sidecar(), set.sidecar());
        let side = std::fs::read_to_string(stem.with_extension("json")).unwrap();
        assert!(side.contains("\"metric\": \"euclidean\""));
    }
}
