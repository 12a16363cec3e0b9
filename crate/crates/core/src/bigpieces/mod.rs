//! Big pieces: cube-wise witnesses, localized approximants, the sawtooth
//! lemmas and the engine turning a coronization into BP² witnesses.

mod engine;

pub use engine::{
    corona_to_bp2, BP2Certificate, CaseKind, ClauseRecord, CubeCertificate, EngineConfig,
    InductionState, RungSummary, Violation,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carleson::{carleson_norm, DiscreteMeasure, ROUNDING};
use crate::corona::{distance_cache, ApproximantCatalog, CoronaDecomposition};
use crate::dyadic::{dilate, sawtooth, DyadicTree};
use crate::error::{Error, Result};
use crate::space::{localize_indices, log_radii, strided_sample, WeightedSet};

/// Matching radius: a point of `E` lies on `Γ` when some point of `Γ` is this close.
pub fn delta_match(set: &WeightedSet) -> f64 {
    2.0 * set.r_min()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BPWitness {
    pub cube: Option<usize>,
    pub center: Option<usize>,
    pub radius: Option<f64>,
    pub approximant_id: usize,
    pub intersection_mass: f64,
    pub theta_achieved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BPCheck {
    pub theta: f64,
    pub witnesses: Vec<BPWitness>,
    /// First cube (by id) where no member reaches `θ`.
    pub failure: Option<usize>,
    pub min_theta: f64,
}

impl BPCheck {
    pub fn pass(&self) -> bool {
        self.failure.is_none()
    }
}

/// `on[j][i]`: point `i` of `set` lies on catalog member `j`.
pub fn lies_on(set: &WeightedSet, catalog: &ApproximantCatalog) -> Vec<Vec<bool>> {
    let delta = delta_match(set);
    catalog
        .sets()
        .iter()
        .map(|g| distance_cache(set, g).into_iter().map(|d| d <= delta).collect())
        .collect()
}

/// For every cube the member with the largest `μ(Q ∩ Γ)/μ(Q)`, ties to the
/// smaller member index. `on` is a lies-on table as from [`lies_on`].
pub fn bp_check_with(tree: &DyadicTree, on: &[Vec<bool>], theta: f64) -> Result<BPCheck> {
    if !(theta > 0.0) {
        return Err(Error::invalid(format!("θ = {theta} must be positive")));
    }
    if on.is_empty() {
        return Err(Error::invalid("empty catalog"));
    }
    let set = tree.set();
    let witnesses: Vec<BPWitness> = (0..tree.len())
        .into_par_iter()
        .map(|q| {
            let members = &tree.cube(q).members;
            let mut best = (0, -1.0);
            for (j, flags) in on.iter().enumerate() {
                let m: f64 = members.iter().filter(|&&i| flags[i]).map(|&i| set.weight(i)).sum();
                if m > best.1 {
                    best = (j, m);
                }
            }
            BPWitness {
                cube: Some(q),
                center: None,
                radius: None,
                approximant_id: best.0,
                intersection_mass: best.1,
                theta_achieved: best.1 / tree.mass(q),
            }
        })
        .collect();
    let failure = witnesses
        .iter()
        .find(|w| w.theta_achieved < theta * (1.0 - ROUNDING))
        .and_then(|w| w.cube);
    let min_theta = witnesses.iter().map(|w| w.theta_achieved).fold(f64::INFINITY, f64::min);
    Ok(BPCheck {
        theta,
        witnesses,
        failure,
        min_theta,
    })
}

/// Cube-wise big pieces of the catalog with constant `θ`.
pub fn bp_check(tree: &DyadicTree, catalog: &ApproximantCatalog, theta: f64) -> Result<BPCheck> {
    bp_check_with(tree, &lies_on(tree.set(), catalog), theta)
}

/// Best member for the ball `B(x_i, r)`: `max_j μ(Γ_j ∩ E ∩ B)/rᵈ`.
pub fn ball_witness(set: &WeightedSet, on: &[Vec<bool>], x: usize, r: f64) -> BPWitness {
    let ball = set.index().ball(set.point(x), r);
    let mut best = (0, -1.0);
    for (j, flags) in on.iter().enumerate() {
        let m: f64 = ball.iter().filter(|(i, _)| flags[*i]).map(|(i, _)| set.weight(*i)).sum();
        if m > best.1 {
            best = (j, m);
        }
    }
    BPWitness {
        cube: None,
        center: Some(x),
        radius: Some(r),
        approximant_id: best.0,
        intersection_mass: best.1,
        theta_achieved: best.1 / r.powf(set.dim_d()),
    }
}

/// Both directions of the cube/ball equivalence measured on a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub cube_theta: f64,
    pub ball_theta: f64,
    /// `ball_theta / cube_theta`.
    pub c: f64,
    /// `cube_theta / ball_theta`.
    pub c_prime: f64,
    /// Every tested ball dominates the big piece of its containing cube.
    pub containing_cube_ok: bool,
    pub balls: usize,
}

/// Tests balls centred at up to `max_centers` points over the radius grid of
/// the scale range. For each ball the containing cube is the cube of the
/// centre at the coarsest level whose diameter is at most `r`.
pub fn ball_round_trip(
    tree: &DyadicTree,
    on: &[Vec<bool>],
    max_centers: usize,
) -> Result<RoundTrip> {
    let cubes = bp_check_with(tree, on, f64::MIN_POSITIVE)?;
    let set = tree.set();
    let (lo, hi) = set.scale_range();
    let radii = log_radii(lo, hi, 4);
    let centers = strided_sample(set.len(), Some(max_centers));
    let d = set.dim_d();
    let rows: Vec<(f64, bool)> = centers
        .par_iter()
        .flat_map_iter(|&x| radii.iter().map(move |&r| (x, r)))
        .map(|(x, r)| {
            let w = ball_witness(set, on, x, r);
            let inside = (tree.k_min()..=tree.k_max())
                .map(|k| tree.cube_of_point(x, k))
                .find(|&q| tree.diam(q) <= r);
            let ok = match inside {
                Some(q) => {
                    let piece = cubes.witnesses[q].intersection_mass;
                    w.intersection_mass >= piece * (1.0 - ROUNDING)
                }
                None => true,
            };
            (w.intersection_mass / r.powf(d), ok)
        })
        .collect();
    let ball_theta = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    Ok(RoundTrip {
        cube_theta: cubes.min_theta,
        ball_theta,
        c: ball_theta / cubes.min_theta,
        c_prime: cubes.min_theta / ball_theta,
        containing_cube_ok: rows.iter().all(|r| r.1),
        balls: rows.len(),
    })
}

/// `Γ_S(Q)`: the localization of a regime's approximant around the point
/// `X_Q` nearest to `x_Q`, at radius `C₀ ℓ(Q)`.
#[derive(Debug, Clone)]
pub struct LocalizedGraph {
    pub cube: usize,
    pub approximant: usize,
    /// `X_Q` as an index into the approximant.
    pub anchor: usize,
    pub anchor_distance: f64,
    /// Indices into the approximant, sorted.
    pub indices: Vec<usize>,
    pub set: WeightedSet,
    /// `max_{y ∈ Γ_S(Q)} |y − x_Q| / (C₀ ℓ(Q))`.
    pub radius_ratio: f64,
    /// `diam Γ_S(Q) / (C₀ ℓ(Q))`.
    pub diam_ratio: f64,
    /// The diameter bound `C^{-2/d}/2` for the approximant's constant.
    pub diam_bound: f64,
    /// `max_{Q' ⊆ Q in S} sup_{KQ'} dist(·, Γ_S(Q)) / (η ℓ(Q'))`.
    pub still_close: f64,
}

/// Localizes the approximant of the regime holding `q` and checks that it
/// still approximates every regime cube below `q`, that it sits in
/// `B(x_Q, 5C₀ℓ(Q))` and that its diameter is at least `C^{-2/d} C₀ℓ(Q)/2`.
pub fn localize_graph(
    tree: &DyadicTree,
    corona: &CoronaDecomposition,
    catalog: &ApproximantCatalog,
    q: usize,
    c0: f64,
) -> Result<LocalizedGraph> {
    let map = corona.regime_map(tree);
    let dilations = (0..tree.len())
        .map(|c| if map[c].is_some() { dilate(tree, c, corona.k) } else { Ok(Vec::new()) })
        .collect::<Result<Vec<_>>>()?;
    localize_graph_cached(tree, corona, catalog, &map, &dilations, q, c0)
}

pub(crate) fn localize_graph_cached(
    tree: &DyadicTree,
    corona: &CoronaDecomposition,
    catalog: &ApproximantCatalog,
    map: &[Option<usize>],
    dilations: &[Vec<usize>],
    q: usize,
    c0: f64,
) -> Result<LocalizedGraph> {
    let regime = map[q].ok_or_else(|| Error::invalid(format!("cube {q} is bad")))?;
    let approximant = corona.regimes[regime].approximant;
    let gamma = catalog.get(approximant);
    let set = tree.set();
    let ell = tree.length(q);
    let xq = tree.center_point(q);
    let eta = corona.eta;
    let slack = 2.0 * set.r_min();
    let (anchor, anchor_distance) = gamma
        .index()
        .nearest(xq)
        .ok_or_else(|| Error::invalid("empty approximant"))?;
    if anchor_distance >= eta * ell {
        return Err(Error::Certificate {
            clause: "anchor".into(),
            cube: q,
            detail: format!("nearest approximant point at {anchor_distance} ≥ η ℓ = {}", eta * ell),
        });
    }
    let radius = c0 * ell;
    if radius > gamma.r_max() {
        return Err(Error::invalid(format!(
            "C₀ ℓ(Q) = {radius} exceeds the scale range of approximant {approximant} at cube {q}"
        )));
    }
    let indices = localize_indices(gamma, anchor, radius)?;
    let local = gamma.subset(&indices, (gamma.r_min(), 10.0 * radius))?;

    let reach = indices
        .iter()
        .map(|&i| set.metric().distance(gamma.point(i), xq))
        .fold(0.0, f64::max);
    if reach > 5.0 * radius + slack {
        return Err(Error::Certificate {
            clause: "containment".into(),
            cube: q,
            detail: format!("Γ_S(Q) reaches {reach} from x_Q, beyond 5 C₀ ℓ = {}", 5.0 * radius),
        });
    }
    let diam = local.diameter();
    let c = catalog.report(approximant).constant_c;
    let diam_bound = c.powf(-2.0 / gamma.dim_d()) / 2.0;
    if diam + slack < diam_bound * radius {
        return Err(Error::Certificate {
            clause: "diameter".into(),
            cube: q,
            detail: format!("diam Γ_S(Q) = {diam} below {}", diam_bound * radius),
        });
    }

    // KQ' ⊆ KQ for Q' ⊆ Q, so one distance pass over KQ serves every Q'
    let kq = &dilations[q];
    let dist: std::collections::HashMap<usize, f64> =
        kq.iter().map(|&i| (i, local.dist_to(set.point(i)))).collect();
    let mut still_close: f64 = 0.0;
    for c in tree.descendants(q) {
        if map[c] != Some(regime) {
            continue;
        }
        let sup = dilations[c]
            .iter()
            .map(|i| dist.get(i).copied().unwrap_or_else(|| local.dist_to(set.point(*i))))
            .fold(0.0, f64::max);
        let ratio = sup / (eta * tree.length(c));
        still_close = still_close.max(ratio);
        if ratio >= 1.0 {
            return Err(Error::Certificate {
                clause: "localstillclose".into(),
                cube: c,
                detail: format!(
                    "sup over KQ' of dist to Γ_S(Q{q}) is {sup} ≥ η ℓ(Q') = {}",
                    eta * tree.length(c)
                ),
            });
        }
    }
    Ok(LocalizedGraph {
        cube: q,
        approximant,
        anchor,
        anchor_distance,
        indices,
        set: local,
        radius_ratio: reach / radius,
        diam_ratio: diam / radius,
        diam_bound,
        still_close,
    })
}

/// Outcome of following the cubes that contain `x` below `Q0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCheck {
    pub member: bool,
    /// Number of levels below `Q0` in the chain.
    pub length: usize,
    /// `dist(x, Γ_S(Q0))` when `member` and a localization was given.
    pub distance: Option<f64>,
    /// `η ℓ(Q_L)` for the finest chain cube `Q_L`.
    pub tolerance: f64,
}

/// True iff `x ∈ Q0` and every cube containing `x` from `Q0` down to the
/// finest level lies in the regime of `Q0`.
pub fn nested_chain_membership(
    tree: &DyadicTree,
    corona: &CoronaDecomposition,
    x: usize,
    q0: usize,
) -> bool {
    chain_of(tree, &corona.regime_map(tree), x, q0)
}

fn chain_of(tree: &DyadicTree, map: &[Option<usize>], x: usize, q0: usize) -> bool {
    let Some(r) = map[q0] else { return false };
    let k0 = tree.cube(q0).k;
    tree.contains_point(q0, x) && (k0..=tree.k_max()).all(|k| map[tree.cube_of_point(x, k)] == Some(r))
}

/// [`nested_chain_membership`] together with the distance from `x` to a
/// localization of the regime approximant at `Q0`.
pub fn chain_check(
    tree: &DyadicTree,
    corona: &CoronaDecomposition,
    local: &LocalizedGraph,
    x: usize,
) -> ChainCheck {
    let q0 = local.cube;
    let member = nested_chain_membership(tree, corona, x, q0);
    let length = (tree.k_max() - tree.cube(q0).k).max(0) as usize;
    let tolerance = corona.eta * tree.length(q0) * 0.5f64.powi(length as i32);
    let distance = member.then(|| local.set.dist_to(tree.set().point(x)));
    ChainCheck {
        member,
        length,
        distance,
        tolerance,
    }
}

/// The regime `S₀` holding `Q0`, after checking that the whole sawtooth
/// `𝔻_{F,Q0}` lies in it. The measure must have sawtooth norm at most 1/2
/// and `F ≠ {Q0}`.
pub fn regime_of_sawtooth(
    tree: &DyadicTree,
    corona: &CoronaDecomposition,
    m: &DiscreteMeasure,
    q0: usize,
    family: &[usize],
) -> Result<usize> {
    if family == [q0] {
        return Err(Error::invalid("F = {Q0} has an empty sawtooth"));
    }
    let norm = carleson_norm(tree, m, family, Some(q0))?;
    if norm.value > 0.5 * (1.0 + ROUNDING) {
        return Err(Error::invalid(format!(
            "sawtooth norm {} exceeds 1/2 at cube {:?}",
            norm.value, norm.witness
        )));
    }
    let map = corona.regime_map(tree);
    let tops: Vec<bool> = {
        let mut t = vec![false; tree.len()];
        for r in &corona.regimes {
            t[r.maximal] = true;
        }
        t
    };
    let s0 = map[q0].ok_or_else(|| Error::Contract(format!("cube {q0} is bad but heads a light sawtooth")))?;
    for q in sawtooth(tree, q0, family)? {
        if map[q] != Some(s0) || (q != q0 && tops[q]) {
            return Err(Error::Contract(format!(
                "sawtooth cube {q} of Q0 = {q0} is {} outside regime {s0}",
                if map[q].is_none() { "bad" } else { "maximal" }
            )));
        }
    }
    Ok(s0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatedFamily {
    pub chosen: Vec<usize>,
    pub input_mass: f64,
    pub retained_mass: f64,
    /// `retained_mass / input_mass`.
    pub fraction: f64,
}

/// Greedy largest-first: a cube is admitted iff its distance to every cube
/// admitted so far is at least `sep_factor` times the larger of the two lengths.
pub fn separated_subfamily(tree: &DyadicTree, cubes: &[usize], sep_factor: f64) -> SeparatedFamily {
    let mut order = cubes.to_vec();
    order.sort_by_key(|&q| (tree.cube(q).k, q));
    order.dedup();
    let metric = tree.set().metric();
    let mut chosen: Vec<usize> = Vec::new();
    for &q in &order {
        let ok = chosen.iter().all(|&c| {
            let need = sep_factor * tree.length(q).max(tree.length(c));
            let centers = metric.distance(tree.center_point(q), tree.center_point(c));
            if centers - tree.diam(q) - tree.diam(c) >= need {
                true
            } else if centers < need {
                false
            } else {
                tree.cube_distance(q, c) >= need
            }
        });
        if ok {
            chosen.push(q);
        }
    }
    let input_mass: f64 = order.iter().map(|&q| tree.mass(q)).sum();
    let retained_mass: f64 = chosen.iter().map(|&q| tree.mass(q)).sum();
    chosen.sort_unstable();
    SeparatedFamily {
        chosen,
        input_mass,
        retained_mass,
        fraction: if input_mass > 0.0 { retained_mass / input_mass } else { 1.0 },
    }
}
