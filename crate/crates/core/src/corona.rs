//! Coronizations: coherent stopping-time regimes, bad cubes, an approximant
//! catalog, validation, and a greedy top-down builder.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carleson::{packing_check, PackingReport};
use crate::dyadic::{dilate, DyadicTree};
use crate::error::{Error, Result};
use crate::space::{regularity_check_with, RegularityOptions, RegularityReport, WeightedSet};

/// The class `ℰ` of approximating sets with their regularity reports.
#[derive(Debug, Clone)]
pub struct ApproximantCatalog {
    sets: Vec<WeightedSet>,
    reports: Vec<RegularityReport>,
    c_star_star: f64,
}

impl ApproximantCatalog {
    pub fn new(sets: Vec<WeightedSet>) -> Result<Self> {
        Self::with_options(sets, &RegularityOptions::default())
    }

    /// Checks each member with the given options; `C_**` is the largest constant.
    pub fn with_options(sets: Vec<WeightedSet>, opts: &RegularityOptions) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::invalid("empty approximant catalog"));
        }
        let reports = sets
            .iter()
            .enumerate()
            .map(|(i, s)| {
                regularity_check_with(s, opts)
                    .map_err(|e| Error::invalid(format!("catalog member {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let c_star_star = reports.iter().map(|r| r.constant_c).fold(1.0, f64::max);
        Ok(ApproximantCatalog {
            sets,
            reports,
            c_star_star,
        })
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, i: usize) -> &WeightedSet {
        &self.sets[i]
    }

    pub fn sets(&self) -> &[WeightedSet] {
        &self.sets
    }

    pub fn report(&self, i: usize) -> &RegularityReport {
        &self.reports[i]
    }

    pub fn c_star_star(&self) -> f64 {
        self.c_star_star
    }
}

/// `dist(x, Γ)` for every point `x` of `set`.
pub fn distance_cache(set: &WeightedSet, gamma: &WeightedSet) -> Vec<f64> {
    (0..set.len())
        .into_par_iter()
        .map(|i| gamma.dist_to(set.point(i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingRegime {
    pub id: usize,
    pub maximal: usize,
    pub approximant: usize,
    /// Sorted cube ids.
    pub cubes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoronaDecomposition {
    pub eta: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub packing_constant: f64,
    pub regimes: Vec<StoppingRegime>,
    pub bad: Vec<usize>,
}

impl CoronaDecomposition {
    /// Regime index of each cube, `None` for bad cubes.
    pub fn regime_map(&self, tree: &DyadicTree) -> Vec<Option<usize>> {
        let mut map = vec![None; tree.len()];
        for (i, r) in self.regimes.iter().enumerate() {
            for &q in &r.cubes {
                if q < map.len() {
                    map[q] = Some(i);
                }
            }
        }
        map
    }

    /// `ℬ ∪ ℳ`: bad cubes and regime tops, sorted.
    pub fn marked(&self) -> Vec<usize> {
        let mut out = self.bad.clone();
        out.extend(self.regimes.iter().map(|r| r.maximal));
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceViolation {
    /// `'a'`, `'b'` or `'c'`.
    pub clause: char,
    pub cube: usize,
    pub detail: String,
}

/// Checks conditions (a), (b) and, unless `semi`, (c) of coherence.
pub fn validate_coherence(
    regime: &StoppingRegime,
    tree: &DyadicTree,
    semi: bool,
) -> std::result::Result<(), CoherenceViolation> {
    let viol = |clause, cube, detail: String| CoherenceViolation {
        clause,
        cube,
        detail,
    };
    let mut member = vec![false; tree.len()];
    for &q in &regime.cubes {
        if q >= tree.len() {
            return Err(viol('a', q, "unknown cube".into()));
        }
        member[q] = true;
    }
    let top = regime.maximal;
    if top >= tree.len() || !member[top] {
        return Err(viol('a', top, "maximal cube is not in the regime".into()));
    }
    for &q in &regime.cubes {
        if !tree.is_within(q, top) {
            return Err(viol('a', q, format!("not below the maximal cube {top}")));
        }
        let mut p = q;
        while p != top {
            p = tree.cube(p).parent.expect("below top");
            if !member[p] {
                return Err(viol('b', q, format!("intermediate cube {p} is missing")));
            }
        }
    }
    if !semi {
        for &q in &regime.cubes {
            let kids = &tree.cube(q).children;
            let inside = kids.iter().filter(|&&c| member[c]).count();
            if inside != 0 && inside != kids.len() {
                return Err(viol(
                    'c',
                    q,
                    format!("{inside} of {} children in the regime", kids.len()),
                ));
            }
        }
    }
    Ok(())
}

/// `sup_{x ∈ KQ} dist(x, Γ) / ℓ(Q)` from a per-point distance cache.
pub fn proximity_ratio(tree: &DyadicTree, q: usize, big_k: f64, dists: &[f64]) -> Result<f64> {
    let kq = dilate(tree, q, big_k)?;
    let sup = kq.iter().map(|&i| dists[i]).fold(0.0, f64::max);
    Ok(sup / tree.length(q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoronaReport {
    pub partition_ok: bool,
    pub partition_detail: Option<String>,
    pub coherence: Vec<(usize, CoherenceViolation)>,
    /// Distinct regimes have distinct maximal cubes.
    pub maximal_distinct: bool,
    pub packing: PackingReport,
    pub worst_proximity: f64,
    pub proximity_witness: Option<usize>,
    /// Regime cubes whose proximity ratio is not below `η`.
    pub proximity_failures: Vec<usize>,
    /// Proximity ratio per cube (`None` for bad cubes).
    pub ratios: Vec<Option<f64>>,
    pub pass: bool,
}

/// Full check of a coronization: partition, coherence, packing of `ℬ ∪ ℳ`
/// against the declared constant and the `η`-proximity of every regime cube.
pub fn validate_corona(
    d: &CoronaDecomposition,
    tree: &DyadicTree,
    catalog: &ApproximantCatalog,
    semi: bool,
) -> Result<CoronaReport> {
    let n = tree.len();
    let mut count = vec![0usize; n];
    let mut partition_detail = None;
    for r in &d.regimes {
        if r.approximant >= catalog.len() {
            return Err(Error::invalid(format!(
                "regime {} refers to approximant {} of {}",
                r.id,
                r.approximant,
                catalog.len()
            )));
        }
        for &q in &r.cubes {
            if q >= n {
                return Err(Error::invalid(format!("regime {} lists unknown cube {q}", r.id)));
            }
            count[q] += 1;
        }
    }
    for &q in &d.bad {
        if q >= n {
            return Err(Error::invalid(format!("unknown bad cube {q}")));
        }
        count[q] += 1;
    }
    if let Some(q) = count.iter().position(|&c| c != 1) {
        partition_detail = Some(format!("cube {q} is covered {} times", count[q]));
    }
    let coherence: Vec<(usize, CoherenceViolation)> = d
        .regimes
        .iter()
        .filter_map(|r| validate_coherence(r, tree, semi).err().map(|v| (r.id, v)))
        .collect();
    let mut maximal_distinct = true;
    for (i, a) in d.regimes.iter().enumerate() {
        for b in &d.regimes[i + 1..] {
            if a.maximal == b.maximal {
                maximal_distinct = false;
            }
        }
    }
    let packing = packing_check(tree, &d.marked(), d.packing_constant);

    let used: Vec<usize> = {
        let mut u: Vec<usize> = d.regimes.iter().map(|r| r.approximant).collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    let mut caches: Vec<Option<Vec<f64>>> = vec![None; catalog.len()];
    for &j in &used {
        caches[j] = Some(distance_cache(tree.set(), catalog.get(j)));
    }
    let jobs: Vec<(usize, usize)> = d
        .regimes
        .iter()
        .flat_map(|r| r.cubes.iter().map(move |&q| (q, r.approximant)))
        .collect();
    let computed: Vec<(usize, f64)> = jobs
        .par_iter()
        .map(|&(q, j)| {
            proximity_ratio(tree, q, d.k, caches[j].as_ref().unwrap()).map(|r| (q, r))
        })
        .collect::<Result<_>>()?;
    let mut ratios = vec![None; n];
    let mut worst = 0.0;
    let mut witness = None;
    let mut failures = Vec::new();
    for (q, r) in computed {
        ratios[q] = Some(r);
        if witness.is_none() || r > worst {
            worst = r;
            witness = Some(q);
        }
        if r >= d.eta {
            failures.push(q);
        }
    }
    failures.sort_unstable();
    let pass = partition_detail.is_none()
        && coherence.is_empty()
        && maximal_distinct
        && packing.pass
        && failures.is_empty();
    Ok(CoronaReport {
        partition_ok: partition_detail.is_none(),
        partition_detail,
        coherence,
        maximal_distinct,
        packing,
        worst_proximity: worst,
        proximity_witness: witness,
        proximity_failures: failures,
        ratios,
        pass,
    })
}

/// Greedy stopping time from the top: an unassigned cube takes the catalog
/// member of smallest proximity ratio and opens a regime if that ratio is
/// below `η` (otherwise it is bad); a regime absorbs the children of a
/// member only when all of them stay below `η`, otherwise the children are
/// handled as new tops. Fails if no regime opens or if the measured packing
/// constant of `ℬ ∪ ℳ` exceeds `pack_cap`.
pub fn build_corona(
    tree: &DyadicTree,
    catalog: &ApproximantCatalog,
    eta: f64,
    big_k: f64,
    pack_cap: f64,
) -> Result<CoronaDecomposition> {
    if !(eta > 0.0) || !(big_k > 1.0) {
        return Err(Error::invalid(format!("need η > 0 and K > 1, got η = {eta}, K = {big_k}")));
    }
    if catalog.is_empty() {
        return Err(Error::invalid("empty approximant catalog"));
    }
    let caches: Vec<Vec<f64>> = catalog
        .sets()
        .iter()
        .map(|g| distance_cache(tree.set(), g))
        .collect();
    // sup of the cached distances over KQ, for every cube and member
    let sups: Vec<Vec<f64>> = (0..tree.len())
        .into_par_iter()
        .map(|q| {
            let kq = dilate(tree, q, big_k)?;
            Ok(caches
                .iter()
                .map(|c| kq.iter().map(|&i| c[i]).fold(0.0, f64::max) / tree.length(q))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut regimes = Vec::new();
    let mut bad = Vec::new();
    let mut queue: VecDeque<usize> = tree.roots().iter().copied().collect();
    while let Some(q) = queue.pop_front() {
        let (best, ratio) = sups[q]
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (j, r)| if r < acc.1 { (j, r) } else { acc });
        if ratio >= eta {
            bad.push(q);
            queue.extend(tree.cube(q).children.iter().copied());
            continue;
        }
        let mut cubes = vec![q];
        let mut frontier = vec![q];
        while let Some(p) = frontier.pop() {
            let kids = &tree.cube(p).children;
            if kids.is_empty() {
                continue;
            }
            if kids.iter().all(|&c| sups[c][best] < eta) {
                cubes.extend(kids.iter().copied());
                frontier.extend(kids.iter().copied());
            } else {
                queue.extend(kids.iter().copied());
            }
        }
        cubes.sort_unstable();
        regimes.push(StoppingRegime {
            id: regimes.len(),
            maximal: q,
            approximant: best,
            cubes,
        });
    }
    if regimes.is_empty() {
        return Err(Error::NoCorona(format!(
            "no cube is within η = {eta} of any catalog member"
        )));
    }
    bad.sort_unstable();
    let mut d = CoronaDecomposition {
        eta,
        k: big_k,
        packing_constant: 0.0,
        regimes,
        bad,
    };
    let packing = packing_check(tree, &d.marked(), pack_cap);
    if !packing.pass {
        return Err(Error::NoCorona(format!(
            "packing ratio {} of bad and top cubes exceeds the cap {pack_cap} at cube {:?}",
            packing.worst_ratio, packing.witness
        )));
    }
    d.packing_constant = packing.worst_ratio;
    Ok(d)
}

/// Coronization with a single regime per top-level cube approximated by `approximant`.
pub fn trivial_corona(tree: &DyadicTree, approximant: usize, eta: f64, big_k: f64) -> CoronaDecomposition {
    let regimes: Vec<StoppingRegime> = tree
        .roots()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let mut cubes = tree.descendants(r);
            cubes.sort_unstable();
            StoppingRegime {
                id: i,
                maximal: r,
                approximant,
                cubes,
            }
        })
        .collect();
    let marked: Vec<usize> = tree.roots().to_vec();
    let packing = packing_check(tree, &marked, f64::INFINITY);
    CoronaDecomposition {
        eta,
        k: big_k,
        packing_constant: packing.worst_ratio,
        regimes,
        bad: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::build_tree;
    use crate::fixtures;
    use crate::metric::Metric;

    fn segment(x0: f64, y: f64, n: usize, h: f64, r: (f64, f64)) -> WeightedSet {
        let coords = (0..n).flat_map(|i| [x0 + i as f64 * h, y]).collect();
        WeightedSet::new(Metric::Euclidean { n: 2 }, coords, vec![h; n], 1.0, r).unwrap()
    }

    #[test]
    fn coherence_cases() {
        let set = fixtures::plane(1, 1, 1.0, 1.0 / 256.0).unwrap();
        let tree = build_tree(&set).unwrap();
        let top = tree.level(tree.k_min() + 1)[0];
        let single = StoppingRegime {
            id: 0,
            maximal: top,
            approximant: 0,
            cubes: vec![top],
        };
        assert!(validate_coherence(&single, &tree, false).is_ok());
        let half = StoppingRegime {
            cubes: vec![top, tree.cube(top).children[0]],
            ..single.clone()
        };
        let v = validate_coherence(&half, &tree, false).unwrap_err();
        assert_eq!((v.clause, v.cube), ('c', top));
        assert!(validate_coherence(&half, &tree, true).is_ok());
        let mut all = tree.descendants(top);
        all.sort_unstable();
        let full = StoppingRegime {
            cubes: all,
            ..single
        };
        assert!(validate_coherence(&full, &tree, false).is_ok());
    }

    #[test]
    fn set_in_catalog_gives_one_regime() {
        let set = fixtures::plane(2, 1, 1.0, 1.0 / 256.0)
            .unwrap()
            .with_scale_range((1.0 / 128.0, 1.0))
            .unwrap();
        let tree = build_tree(&set).unwrap();
        assert_eq!(tree.roots().len(), 1);
        let catalog = ApproximantCatalog::new(vec![set.clone()]).unwrap();
        let d = build_corona(&tree, &catalog, 0.1, 2.0, 10.0).unwrap();
        assert_eq!(d.regimes.len(), 1);
        assert!(d.bad.is_empty());
        let rep = validate_corona(&d, &tree, &catalog, false).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.worst_proximity, 0.0);
    }

    #[test]
    fn orthogonal_plane_has_no_corona() {
        let set = fixtures::plane(2, 1, 1.0, 1.0 / 128.0).unwrap();
        let tree = build_tree(&set).unwrap();
        let coords = (0..128).flat_map(|i| [0.5, i as f64 / 128.0 - 0.5]).collect();
        let vertical =
            WeightedSet::new(Metric::Euclidean { n: 2 }, coords, vec![1.0 / 128.0; 128], 1.0, (1.0 / 64.0, 0.5))
                .unwrap();
        let catalog = ApproximantCatalog::new(vec![vertical]).unwrap();
        assert!(matches!(
            build_corona(&tree, &catalog, 0.1, 2.0, 100.0),
            Err(Error::NoCorona(_))
        ));
    }

    #[test]
    fn two_far_segments() {
        let h = 1.0 / 128.0;
        let range = (2.0 * h, 1.0);
        let a = segment(0.0, 0.0, 256, h, range);
        let b = segment(0.0, 0.75, 256, h, range);
        let e = fixtures::union(&[&a, &b], range).unwrap();
        let tree = build_tree(&e).unwrap();
        let catalog = ApproximantCatalog::new(vec![a, b]).unwrap();
        let eta = 0.2;
        let big_k = 2.0;
        let d = build_corona(&tree, &catalog, eta, big_k, 50.0).unwrap();
        assert!(d.regimes.len() >= 2);
        let rep = validate_corona(&d, &tree, &catalog, false).unwrap();
        assert!(rep.pass, "{rep:?}");
        // a cube is bad exactly when its dilation reaches the other segment
        for &q in &d.bad {
            let kq = dilate(&tree, q, big_k).unwrap();
            let upper = kq.iter().any(|&i| tree.set().point(i)[1] > 0.5);
            let lower = kq.iter().any(|&i| tree.set().point(i)[1] < 0.5);
            assert!(upper && lower, "bad cube {q} sees one segment only");
        }

        // halving η fails exactly on cubes whose ratio lies in [η/2, η)
        let mut half = d.clone();
        half.eta = eta / 2.0;
        let rep2 = validate_corona(&half, &tree, &catalog, false).unwrap();
        let expect: Vec<usize> = rep
            .ratios
            .iter()
            .enumerate()
            .filter_map(|(q, r)| r.filter(|&r| r >= eta / 2.0 && r < eta).map(|_| q))
            .collect();
        assert_eq!(rep2.proximity_failures, expect);
        // and any larger η still passes
        let mut loose = d.clone();
        loose.eta = 2.0 * eta;
        assert!(validate_corona(&loose, &tree, &catalog, false).unwrap().pass);
    }

    #[test]
    fn json_round_trip_uses_declared_keys() {
        let set = fixtures::plane(2, 1, 1.0, 1.0 / 64.0).unwrap();
        let tree = build_tree(&set).unwrap();
        let d = trivial_corona(&tree, 0, 0.1, 2.0);
        let text = d.to_json().unwrap();
        assert!(text.contains("\"K\"") && text.contains("\"packing_constant\""));
        assert_eq!(CoronaDecomposition::from_json(&text).unwrap(), d);
    }
}
