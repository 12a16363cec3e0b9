//! The mass-ladder induction: per cube, a set `F` built from localized
//! approximants, with its clauses checked numerically.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{chain_check, delta_match, localize_graph_cached, regime_of_sawtooth, separated_subfamily, LocalizedGraph};
use crate::carleson::{extrapolate, subtree_sums, DiscreteMeasure, EXTRAPOLATION_C};
use crate::corona::{validate_corona, ApproximantCatalog, CoronaDecomposition};
use crate::dyadic::{dilate, DyadicTree};
use crate::error::{Error, Result};
use crate::space::{localize_indices, log_radii, regularity_check_with, strided_sample, RegularityOptions, WeightedSet};

const MASS_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Ladder step; `1/(4C)` with the extrapolation constant when absent.
    pub b: Option<f64>,
    /// Cubes this close to the finest level are base cases.
    pub base_levels: i32,
    pub max_centers: usize,
    pub radii_per_octave: usize,
    pub fail_fast: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            b: None,
            base_levels: 4,
            max_centers: 256,
            radii_per_octave: 8,
            fail_fast: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    /// `𝔪(𝔻_Q) = 0`: the cube's own regime approximant.
    Empty,
    /// Close to the finest level: best single localized member.
    Base,
    One,
    TwoA,
    TwoB,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
}

/// Measured clauses of one constructed set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseRecord {
    pub case: CaseKind,
    pub approximants: Vec<usize>,
    /// `Q'_j` of Case 2b, or the child of Case 2a.
    pub pieces: Vec<usize>,
    pub f_size: usize,
    /// Largest radius of the regularity and big-piece checks.
    pub scale: f64,
    /// `max_{y ∈ F} |y − x_Q| / (C₀ ℓ(Q))`.
    pub radius_ratio: f64,
    /// `diam F / ℓ(Q)`.
    pub diam_ratio: f64,
    pub reg_lower: f64,
    pub reg_upper: f64,
    pub reg_constant: f64,
    pub t1_max: usize,
    pub cases: CaseCounts,
    pub theta: f64,
    /// `μ(F ∩ Q)/μ(Q)`.
    pub c_prime: f64,
    /// Lower bound for `c_prime` implied by the construction.
    pub c_prime_bound: Option<f64>,
    /// Case 2a: child's `c′` times `2^{-d} C^{-2}`.
    pub predicted_c_prime: Option<f64>,
    pub separated_fraction: Option<f64>,
    /// `μ(∪ good F members)/μ(Q)` in Case 2.
    pub good_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeCertificate {
    pub id: usize,
    pub k: i32,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub rung: usize,
    pub h: ClauseRecord,
    pub h_star: ClauseRecord,
    /// Best `μ(F ∩ Q)/μ(Q)` over the final catalog of sets.
    pub theta_prime: f64,
    /// Cube whose set realises `theta_prime`.
    pub witness_set: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungSummary {
    pub n: usize,
    pub a: f64,
    pub gamma: f64,
    pub cubes: usize,
    /// Cumulative over cubes with rung at most `n`.
    pub c_a: f64,
    pub c_prime_a: f64,
    pub big_c_a: f64,
    pub theta_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub clause: String,
    pub cube: usize,
    pub star: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InductionState {
    pub b: f64,
    pub c0: f64,
    /// Measured `max_Q 𝔪(𝔻_Q)/μ(Q)`.
    pub c_eta_k: f64,
    pub ladder: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rung_of: Vec<usize>,
    pub delta_match: f64,
    /// Sizes of the universe: `E` first, then each catalog member.
    pub universe_offsets: Vec<usize>,
    #[serde(skip)]
    pub h_sets: Vec<Arc<Vec<u32>>>,
    #[serde(skip)]
    pub h_star_sets: Vec<Arc<Vec<u32>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BP2Certificate {
    pub state: InductionState,
    pub rungs: Vec<RungSummary>,
    pub roots: Vec<usize>,
    pub cubes: Vec<CubeCertificate>,
    pub theta_prime: f64,
    pub violations: Vec<Violation>,
    pub pass: bool,
}

#[derive(Serialize)]
struct Node<'a> {
    #[serde(flatten)]
    cube: &'a CubeCertificate,
    nodes: Vec<Node<'a>>,
}

impl BP2Certificate {
    /// JSON with the cubes nested as in the tree.
    pub fn to_json(&self) -> Result<String> {
        fn node<'a>(c: &'a BP2Certificate, q: usize) -> Node<'a> {
            Node {
                cube: &c.cubes[q],
                nodes: c.cubes[q].children.iter().map(|&k| node(c, k)).collect(),
            }
        }
        let tree: Vec<Node> = self.roots.iter().map(|&r| node(self, r)).collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "state": self.state,
            "rungs": self.rungs,
            "theta_prime": self.theta_prime,
            "violations": self.violations,
            "pass": self.pass,
            "tree": tree,
        }))?)
    }
}

/// `E` followed by every catalog member, with lies-on flags.
struct Universe {
    offsets: Vec<usize>,
    coords: Vec<f64>,
    weights: Vec<f64>,
    on: Vec<u64>,
    e_near: Vec<Vec<u32>>,
    r_lo: f64,
}

impl Universe {
    fn new(set: &WeightedSet, catalog: &ApproximantCatalog) -> Result<Self> {
        if catalog.len() > 64 {
            return Err(Error::invalid("at most 64 catalog members are supported"));
        }
        let delta = delta_match(set);
        let mut offsets = Vec::new();
        let mut coords = set.coords().to_vec();
        let mut weights = set.weights().to_vec();
        for g in catalog.sets() {
            offsets.push(weights.len());
            coords.extend_from_slice(g.coords());
            weights.extend_from_slice(g.weights());
        }
        let mut on = vec![0u64; weights.len()];
        for (j, g) in catalog.sets().iter().enumerate() {
            let flags: Vec<u64> = (0..g.len())
                .into_par_iter()
                .map(|i| {
                    let p = g.point(i);
                    catalog
                        .sets()
                        .iter()
                        .enumerate()
                        .filter(|(k, h)| *k == j || h.index().any_in_ball(p, delta, |_| true))
                        .fold(0u64, |m, (k, _)| m | (1 << k))
                })
                .collect();
            on[offsets[j]..offsets[j] + g.len()].copy_from_slice(&flags);
        }
        let e_near = (0..set.len())
            .into_par_iter()
            .map(|e| {
                let mut v = Vec::new();
                for (j, g) in catalog.sets().iter().enumerate() {
                    g.index().for_each_in_ball(set.point(e), delta, |i, _| {
                        v.push((offsets[j] + i) as u32)
                    });
                }
                v
            })
            .collect();
        let r_lo = catalog.sets().iter().map(|g| g.r_min()).fold(set.r_min(), f64::max);
        Ok(Universe {
            offsets,
            coords,
            weights,
            on,
            e_near,
            r_lo,
        })
    }

    fn member(&self, j: usize, idx: impl IntoIterator<Item = usize>) -> Vec<u32> {
        let mut v: Vec<u32> = idx.into_iter().map(|i| (self.offsets[j] + i) as u32).collect();
        v.sort_unstable();
        v
    }

    fn origin(&self, u: u32) -> usize {
        self.offsets.partition_point(|&o| o <= u as usize) - 1
    }
}

fn merge(parts: &[&[u32]]) -> Vec<u32> {
    let mut v: Vec<u32> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn is_subset(small: &[u32], big: &[u32]) -> bool {
    small.iter().all(|u| big.binary_search(u).is_ok())
}

#[derive(Debug, Clone, Copy)]
struct Eval {
    diam: f64,
    lower: f64,
    upper: f64,
    theta: f64,
    t1_max: usize,
    cases: CaseCounts,
}

#[derive(Debug, Clone)]
struct Built {
    f: Arc<Vec<u32>>,
    record: ClauseRecord,
}

struct Plan {
    case: CaseKind,
    f0: Vec<u32>,
    /// `(Q'_j, F_j)`.
    pieces: Vec<(usize, Arc<Vec<u32>>)>,
    scale: f64,
    bound: Option<f64>,
    predicted: Option<f64>,
    separated: Option<f64>,
    good: Option<f64>,
}

struct Engine<'a> {
    tree: &'a DyadicTree,
    corona: &'a CoronaDecomposition,
    catalog: &'a ApproximantCatalog,
    cfg: &'a EngineConfig,
    map: Vec<Option<usize>>,
    m: DiscreteMeasure,
    sums: Vec<f64>,
    rung: Vec<usize>,
    b: f64,
    c0: f64,
    e_const: f64,
    univ: Universe,
    locals: Vec<Option<LocalizedGraph>>,
    memo: Mutex<HashMap<(Vec<u32>, u64), Arc<OnceLock<Eval>>>>,
}

struct CubeOut {
    h: Built,
    h_star: Built,
    violations: Vec<Violation>,
}

/// Runs the ladder `a = 0, b, 2b, …` over every cube and checks the
/// resulting BP² witnesses.
pub fn corona_to_bp2(
    tree: &DyadicTree,
    corona: &CoronaDecomposition,
    catalog: &ApproximantCatalog,
    cfg: &EngineConfig,
) -> Result<BP2Certificate> {
    let report = validate_corona(corona, tree, catalog, false)?;
    if !report.pass {
        return Err(Error::invalid(format!(
            "coronization does not validate (worst proximity {} at {:?}, packing {})",
            report.worst_proximity, report.proximity_witness, report.packing.worst_ratio
        )));
    }
    let b = cfg.b.unwrap_or(1.0 / (4.0 * EXTRAPOLATION_C));
    if !(b > 0.0 && EXTRAPOLATION_C * b <= 0.5) {
        return Err(Error::invalid(format!("ladder step b = {b} needs 0 < C b ≤ 1/2")));
    }
    let set = tree.set();
    let map = corona.regime_map(tree);
    let m = DiscreteMeasure::indicator(tree, &corona.marked());
    let sums = subtree_sums(tree, &m, &[]);
    let ratios: Vec<f64> = (0..tree.len()).map(|q| sums[q] / tree.mass(q)).collect();
    let c_eta_k = ratios.iter().copied().fold(0.0, f64::max);
    let rung: Vec<usize> = ratios.iter().map(|r| (r / b).ceil().max(0.0) as usize).collect();
    let top = (c_eta_k / b).ceil() as usize;

    let c1 = tree.constants().c1;
    let c0 = (4.0 * c1).max(corona.k * c1 + 2.0 * corona.eta) + 1.0;
    let e_const = regularity_check_with(
        set,
        &RegularityOptions {
            max_centers: Some(cfg.max_centers),
            ..Default::default()
        },
    )?
    .constant_c;

    let dilations = (0..tree.len())
        .into_par_iter()
        .map(|q| if map[q].is_some() { dilate(tree, q, corona.k) } else { Ok(Vec::new()) })
        .collect::<Result<Vec<_>>>()?;
    let locals = (0..tree.len())
        .into_par_iter()
        .map(|q| {
            map[q]
                .map(|_| localize_graph_cached(tree, corona, catalog, &map, &dilations, q, c0))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;

    let univ = Universe::new(set, catalog)?;
    let engine = Engine {
        tree,
        corona,
        catalog,
        cfg,
        map,
        m,
        sums,
        rung,
        b,
        c0,
        e_const,
        univ,
        locals,
        memo: Mutex::new(HashMap::new()),
    };
    engine.run(top, c_eta_k)
}

impl Engine<'_> {
    fn run(self, top: usize, c_eta_k: f64) -> Result<BP2Certificate> {
        let tree = self.tree;
        let n = tree.len();
        let mut h: Vec<Option<Built>> = vec![None; n];
        let mut hs: Vec<Option<Built>> = vec![None; n];
        let mut violations = Vec::new();
        let mut rungs = Vec::new();
        let mut acc = (f64::INFINITY, f64::INFINITY, 0.0f64, f64::INFINITY);
        for r in 0..=top {
            let cubes: Vec<usize> = (0..n).filter(|&q| self.rung[q] == r).collect();
            let outs: Vec<(usize, CubeOut)> = cubes
                .par_iter()
                .map(|&q| (q, self.build_cube(q, &h, &hs)))
                .collect();
            let mut fresh: Vec<Violation> = Vec::new();
            for (q, out) in outs {
                for rec in [&out.h.record, &out.h_star.record] {
                    acc.0 = acc.0.min(rec.diam_ratio);
                    acc.1 = acc.1.min(rec.c_prime);
                    acc.2 = acc.2.max(rec.reg_constant);
                    acc.3 = acc.3.min(rec.theta);
                }
                h[q] = Some(out.h);
                hs[q] = Some(out.h_star);
                fresh.extend(out.violations);
            }
            fresh.sort_by(|a, b| a.cube.cmp(&b.cube).then(a.star.cmp(&b.star)));
            if self.cfg.fail_fast {
                if let Some(v) = fresh.first() {
                    return Err(Error::Certificate {
                        clause: v.clause.clone(),
                        cube: v.cube,
                        detail: v.detail.clone(),
                    });
                }
            }
            violations.extend(fresh);
            let a = r as f64 * self.b;
            rungs.push(RungSummary {
                n: r,
                a,
                gamma: self.b / (a + 2.0 * self.b),
                cubes: cubes.len(),
                c_a: acc.0,
                c_prime_a: acc.1,
                big_c_a: acc.2,
                theta_a: acc.3,
            });
        }
        let h: Vec<Built> = h.into_iter().map(|b| b.expect("every cube sits on a rung")).collect();
        let hs: Vec<Built> = hs.into_iter().map(|b| b.expect("every cube sits on a rung")).collect();

        // BP²: each cube's own H* set first, the rest only if that fails.
        let finals: Vec<(f64, usize)> = (0..n)
            .into_par_iter()
            .map(|q| {
                let own = self.c_prime(q, &hs[q].f);
                if own > 0.0 {
                    return (own, q);
                }
                (0..n)
                    .map(|p| (self.c_prime(q, &hs[p].f), p))
                    .fold((0.0, q), |best, x| if x.0 > best.0 { x } else { best })
            })
            .collect();
        for (q, &(t, _)) in finals.iter().enumerate() {
            if !(t > 0.0) {
                violations.push(Violation {
                    clause: "bp2".into(),
                    cube: q,
                    star: true,
                    detail: "no constructed set meets the cube".into(),
                });
            }
        }
        if self.cfg.fail_fast {
            if let Some(v) = violations.first() {
                return Err(Error::Certificate {
                    clause: v.clause.clone(),
                    cube: v.cube,
                    detail: v.detail.clone(),
                });
            }
        }
        let theta_prime = finals.iter().map(|f| f.0).fold(f64::INFINITY, f64::min);
        let cubes: Vec<CubeCertificate> = (0..n)
            .map(|q| {
                let c = tree.cube(q);
                CubeCertificate {
                    id: q,
                    k: c.k,
                    parent: c.parent,
                    children: c.children.clone(),
                    rung: self.rung[q],
                    h: h[q].record.clone(),
                    h_star: hs[q].record.clone(),
                    theta_prime: finals[q].0,
                    witness_set: finals[q].1,
                }
            })
            .collect();
        let ladder: Vec<f64> = (0..=top).map(|r| r as f64 * self.b).collect();
        let gamma = ladder.iter().map(|a| self.b / (a + 2.0 * self.b)).collect();
        let pass = violations.is_empty() && theta_prime > 0.0;
        Ok(BP2Certificate {
            state: InductionState {
                b: self.b,
                c0: self.c0,
                c_eta_k,
                ladder,
                gamma,
                rung_of: self.rung.clone(),
                delta_match: delta_match(tree.set()),
                universe_offsets: std::iter::once(0).chain(self.univ.offsets.iter().copied()).collect(),
                h_sets: h.iter().map(|b| b.f.clone()).collect(),
                h_star_sets: hs.iter().map(|b| b.f.clone()).collect(),
            },
            rungs,
            roots: tree.roots().to_vec(),
            cubes,
            theta_prime,
            violations,
            pass,
        })
    }

    fn build_cube(&self, q: usize, h: &[Option<Built>], hs: &[Option<Built>]) -> CubeOut {
        let mut v = Vec::new();
        let tree = self.tree;
        let n = self.rung[q];
        if n == 0 {
            if self.map[q].is_some() {
                return self.regime_case(q, CaseKind::Empty, None, &[], v);
            }
            self.violate(&mut v, "empty", q, false, "unmarked cube outside every regime".into());
            return self.base_case(q, v);
        }
        if tree.k_max() - tree.cube(q).k < self.cfg.base_levels {
            return self.base_case(q, v);
        }
        let b = self.b;
        let a = (n - 1) as f64 * b;
        let ex = match extrapolate(tree, &self.m, q, a, b) {
            Ok(ex) => ex,
            Err(e) => {
                self.violate(&mut v, "extrapolation", q, false, e.to_string());
                return self.base_case(q, v);
            }
        };
        let gamma = b / (a + 2.0 * b);
        let mu = tree.mass(q);

        if ex.family_f == [q] {
            // pigeonhole: some child carries at most a μ of the measure
            let child = tree
                .cube(q)
                .children
                .iter()
                .copied()
                .min_by(|&x, &y| {
                    let rx = self.sums[x] / tree.mass(x);
                    let ry = self.sums[y] / tree.mass(y);
                    rx.total_cmp(&ry).then(x.cmp(&y))
                });
            let child = match child {
                Some(c) if self.sums[c] <= a * tree.mass(c) * (1.0 + MASS_SLACK) => c,
                _ => {
                    self.violate(&mut v, "pigeonhole", q, false, format!("no child with 𝔪(𝔻) ≤ {a} μ"));
                    return self.base_case(q, v);
                }
            };
            let (Some(hc), Some(hsc)) = (&h[child], &hs[child]) else {
                self.violate(&mut v, "ladder", q, false, format!("child {child} not yet built"));
                return self.base_case(q, v);
            };
            let share = tree.mass(child) / mu;
            let degrade = 2f64.powf(-tree.set().dim_d()) * self.e_const.powi(-2);
            let [hb, hsb] = [(hc, false), (hsc, true)].map(|(src, star)| {
                let plan = Plan {
                    case: CaseKind::TwoA,
                    f0: Vec::new(),
                    pieces: vec![(child, src.f.clone())],
                    scale: if star { src.record.scale } else { self.c0 * tree.length(q) },
                    bound: Some(src.record.c_prime * share),
                    predicted: Some(src.record.c_prime * degrade),
                    separated: None,
                    good: None,
                };
                self.finish(q, plan, star, &mut v)
            });
            return CubeOut {
                h: hb,
                h_star: hsb,
                violations: v,
            };
        }

        let s0 = match regime_of_sawtooth(tree, self.corona, &self.m, q, &ex.family_f) {
            Ok(s) => s,
            Err(e) => {
                self.violate(&mut v, "sawtooth", q, false, e.to_string());
                return self.base_case(q, v);
            }
        };
        let members = &tree.cube(q).members;
        let mut covered = vec![false; tree.set().len()];
        for &f in &ex.family_f {
            for &i in &tree.cube(f).members {
                covered[i] = true;
            }
        }
        let a_pts: Vec<usize> = members.iter().copied().filter(|&i| !covered[i]).collect();
        let mu_a = tree.set().mass_of(a_pts.iter().copied());

        if mu_a > gamma / 2.0 * mu {
            let local = self.locals[q].as_ref().expect("regime cube has a localization");
            if let Some(x) = a_pts.iter().copied().find(|&x| {
                let c = chain_check(tree, self.corona, local, x);
                !c.member || c.distance.is_some_and(|d| d >= c.tolerance)
            }) {
                self.violate(&mut v, "chain", q, false, format!("point {x} of A is off Γ_S(Q0) or its chain leaves S₀ = {s0}"));
            }
            return self.regime_case(q, CaseKind::One, Some(mu_a / mu), &[], v);
        }

        let bad: std::collections::HashSet<usize> = ex.bad_subfamily.iter().copied().collect();
        let good: Vec<usize> = ex.family_f.iter().copied().filter(|f| !bad.contains(f)).collect();
        let good_mass: f64 = good.iter().map(|&g| tree.mass(g)).sum::<f64>() / mu;
        if good_mass < gamma / 2.0 * (1.0 - MASS_SLACK) {
            self.violate(&mut v, "good-mass", q, false, format!("μ(G)/μ(Q0) = {good_mass} below γ/2 = {}", gamma / 2.0));
        }
        let tilde: Vec<usize> = good
            .iter()
            .filter_map(|&g| {
                tree.cube(g)
                    .children
                    .iter()
                    .copied()
                    .filter(|&c| self.sums[c] <= a * tree.mass(c) * (1.0 + MASS_SLACK))
                    .min_by(|&x, &y| {
                        (self.sums[x] / tree.mass(x))
                            .total_cmp(&(self.sums[y] / tree.mass(y)))
                            .then(x.cmp(&y))
                    })
            })
            .collect();
        let sep = separated_subfamily(tree, &tilde, 80.0 * self.c0);
        let mut pieces = Vec::new();
        let mut bound = 0.0;
        for &p in &sep.chosen {
            let gp = tree.cube(p).parent.and_then(|x| tree.cube(x).parent);
            if gp.map(|g| self.map[g]) != Some(Some(s0)) {
                self.violate(&mut v, "grandparent", q, false, format!("grandparent of {p} is not in S₀ = {s0}"));
            }
            match &h[p] {
                Some(hp) => {
                    bound += hp.record.c_prime * tree.mass(p) / mu;
                    pieces.push((p, hp.f.clone()));
                }
                None => self.violate(&mut v, "ladder", q, false, format!("piece {p} not yet built")),
            }
        }
        let mut out = self.regime_case(q, CaseKind::TwoB, Some(bound), &pieces, v);
        for rec in [&mut out.h.record, &mut out.h_star.record] {
            rec.separated_fraction = Some(sep.fraction);
            rec.good_fraction = Some(good_mass);
        }
        out
    }

    /// `F = Γ_{S0}(Q0) ∪ ⋃F_j` and `Γ_{S0} ∪ ⋃F_j`.
    fn regime_case(
        &self,
        q: usize,
        case: CaseKind,
        bound: Option<f64>,
        pieces: &[(usize, Arc<Vec<u32>>)],
        mut v: Vec<Violation>,
    ) -> CubeOut {
        let local = self.locals[q].as_ref().expect("regime cube has a localization");
        let j = local.approximant;
        let whole = self.catalog.get(j);
        let plans = [
            (self.univ.member(j, local.indices.iter().copied()), self.c0 * self.tree.length(q), false),
            (self.univ.member(j, 0..whole.len()), whole.r_max(), true),
        ];
        let [hb, hsb] = plans.map(|(f0, scale, star)| {
            let plan = Plan {
                case,
                f0,
                pieces: pieces.to_vec(),
                scale,
                bound,
                predicted: None,
                separated: None,
                good: None,
            };
            self.finish(q, plan, star, &mut v)
        });
        CubeOut {
            h: hb,
            h_star: hsb,
            violations: v,
        }
    }

    /// The member whose localization (or whole cloud, for H*) covers most of `Q`.
    fn base_case(&self, q: usize, mut v: Vec<Violation>) -> CubeOut {
        let tree = self.tree;
        let ell = tree.length(q);
        let radius = self.c0 * ell;
        let xq = tree.center_point(q);
        let mut best_h: Option<(f64, usize, Vec<u32>)> = None;
        let mut best_s: Option<(f64, usize, Vec<u32>)> = None;
        for (j, g) in self.catalog.sets().iter().enumerate() {
            let whole = self.univ.member(j, 0..g.len());
            let cs = self.c_prime(q, &whole);
            if best_s.as_ref().is_none_or(|b| cs > b.0) {
                best_s = Some((cs, j, whole));
            }
            // a member missing the whole cube cannot help once localized
            if cs == 0.0 || radius > g.r_max() || radius < g.r_min() {
                continue;
            }
            let Some((anchor, _)) = g.index().nearest(xq) else { continue };
            let Ok(idx) = localize_indices(g, anchor, radius) else { continue };
            let f = self.univ.member(j, idx);
            let ch = self.c_prime(q, &f);
            if best_h.as_ref().is_none_or(|b| ch > b.0) {
                best_h = Some((ch, j, f));
            }
        }
        let (_, js, fs) = best_s.expect("catalog is not empty");
        let fh = match best_h {
            Some((_, _, f)) => f,
            None => {
                self.violate(&mut v, "base", q, false, format!("no member localizes at radius {radius}"));
                fs.clone()
            }
        };
        let hb = self.finish(
            q,
            Plan {
                case: CaseKind::Base,
                f0: fh,
                pieces: Vec::new(),
                scale: radius,
                bound: None,
                predicted: None,
                separated: None,
                good: None,
            },
            false,
            &mut v,
        );
        let hsb = self.finish(
            q,
            Plan {
                case: CaseKind::Base,
                f0: fs,
                pieces: Vec::new(),
                scale: self.catalog.get(js).r_max(),
                bound: None,
                predicted: None,
                separated: None,
                good: None,
            },
            true,
            &mut v,
        );
        CubeOut {
            h: hb,
            h_star: hsb,
            violations: v,
        }
    }

    fn violate(&self, v: &mut Vec<Violation>, clause: &str, cube: usize, star: bool, detail: String) {
        v.push(Violation {
            clause: clause.into(),
            cube,
            star,
            detail,
        });
    }

    /// `μ(F ∩ Q)/μ(Q)` with the lies-on rule.
    fn c_prime(&self, q: usize, f: &[u32]) -> f64 {
        let set = self.tree.set();
        let hit: f64 = self
            .tree
            .cube(q)
            .members
            .iter()
            .filter(|&&e| self.univ.e_near[e].iter().any(|u| f.binary_search(u).is_ok()))
            .map(|&e| set.weight(e))
            .sum();
        hit / self.tree.mass(q)
    }

    fn finish(&self, q: usize, plan: Plan, star: bool, v: &mut Vec<Violation>) -> Built {
        let tree = self.tree;
        let ell = tree.length(q);
        let slack = 2.0 * tree.set().r_min();
        let parts: Vec<&[u32]> = std::iter::once(plan.f0.as_slice())
            .chain(plan.pieces.iter().map(|p| p.1.as_slice()))
            .collect();
        let f = merge(&parts);
        if !is_subset(&plan.f0, &f) {
            self.violate(v, "sandwich", q, star, "F₀ is not inside F".into());
        }
        let xq = tree.center_point(q);
        let metric = tree.set().metric();
        let dim = metric.dim();
        let reach = f
            .iter()
            .map(|&u| {
                let u = u as usize;
                metric.distance(&self.univ.coords[u * dim..(u + 1) * dim], xq)
            })
            .fold(0.0, f64::max);
        let radius_ratio = reach / (self.c0 * ell);
        if !star && reach > 20.0 * self.c0 * ell + slack {
            self.violate(v, "containment", q, star, format!("F reaches {reach} from x_Q, beyond 20 C₀ ℓ = {}", 20.0 * self.c0 * ell));
        }
        // Case 2a hands the child's set up unchanged, so it has no F₀/F_j split
        let pieces: Vec<(f64, &[u32])> = if plan.case == CaseKind::TwoB {
            plan.pieces.iter().map(|p| (tree.length(p.0), p.1.as_slice())).collect()
        } else {
            Vec::new()
        };
        let f0_ref: &[u32] = if plan.case == CaseKind::TwoA { &f } else { &plan.f0 };
        let ev = self.evaluate(&f, f0_ref, &pieces, plan.scale);
        let c_prime = self.c_prime(q, &f);
        let approximants = {
            let mut a: Vec<usize> = f.iter().map(|&u| self.univ.origin(u)).collect();
            a.dedup();
            a.sort_unstable();
            a.dedup();
            a
        };
        let reg_constant = ev.upper.max(1.0 / ev.lower);
        if !(ev.diam > 0.0) {
            self.violate(v, "diameter", q, star, "F is a single point".into());
        }
        if !(ev.lower > 0.0 && reg_constant.is_finite()) {
            self.violate(v, "regularity", q, star, format!("ratios in [{}, {}]", ev.lower, ev.upper));
        }
        if !(ev.theta > 0.0) {
            self.violate(v, "big-pieces", q, star, "some ball meets no member".into());
        }
        if ev.t1_max > 1 {
            self.violate(v, "t1", q, star, format!("{} pieces contribute to one ball", ev.t1_max));
        }
        if !(c_prime > 0.0) {
            self.violate(v, "mass", q, star, "F misses Q".into());
        }
        if let Some(bd) = plan.bound {
            if c_prime < bd * (1.0 - MASS_SLACK) {
                self.violate(v, "mass", q, star, format!("c′ = {c_prime} below the construction bound {bd}"));
            }
            if plan.case == CaseKind::One {
                let gamma = self.b / ((self.rung[q] - 1) as f64 * self.b + 2.0 * self.b);
                if bd <= gamma / 2.0 {
                    self.violate(v, "case1", q, star, format!("μ(A)/μ(Q) = {bd} not above γ/2"));
                }
            }
        }
        let record = ClauseRecord {
            case: plan.case,
            approximants,
            pieces: plan.pieces.iter().map(|p| p.0).collect(),
            f_size: f.len(),
            scale: plan.scale,
            radius_ratio,
            diam_ratio: ev.diam / ell,
            reg_lower: ev.lower,
            reg_upper: ev.upper,
            reg_constant,
            t1_max: ev.t1_max,
            cases: ev.cases,
            theta: ev.theta,
            c_prime,
            c_prime_bound: plan.bound,
            predicted_c_prime: plan.predicted,
            separated_fraction: plan.separated,
            good_fraction: plan.good,
        };
        Built {
            f: Arc::new(f),
            record,
        }
    }

    /// Regularity and big pieces of `F` on sampled centres over
    /// `(r_lo, scale)`, with the piece bookkeeping of Case 2b.
    fn evaluate(&self, f: &[u32], f0: &[u32], pieces: &[(f64, &[u32])], scale: f64) -> Eval {
        if !pieces.is_empty() {
            return self.measure(f, f0, pieces, scale);
        }
        // concurrent requests for one set wait on a single computation
        let cell = self
            .memo
            .lock()
            .expect("memo lock")
            .entry((f.to_vec(), scale.to_bits()))
            .or_default()
            .clone();
        *cell.get_or_init(|| self.measure(f, f0, pieces, scale))
    }

    fn measure(&self, f: &[u32], f0: &[u32], pieces: &[(f64, &[u32])], scale: f64) -> Eval {
        let set = self.tree.set();
        let metric = set.metric();
        let dim = metric.dim();
        let d = set.dim_d();
        let coords: Vec<f64> = f
            .iter()
            .flat_map(|&u| self.univ.coords[u as usize * dim..(u as usize + 1) * dim].iter().copied())
            .collect();
        let weights: Vec<f64> = f.iter().map(|&u| self.univ.weights[u as usize]).collect();
        let lo = self.univ.r_lo;
        let hi = scale.max(lo * 2.0);
        let cloud = WeightedSet::assemble(metric, coords, weights, d, (lo, hi))
            .expect("constructed sets are non-empty");
        let radii = log_radii(lo, hi, self.cfg.radii_per_octave.max(1));
        let in_f0: Vec<bool> = f.iter().map(|u| f0.binary_search(u).is_ok()).collect();
        let mut owners: Vec<Vec<u16>> = vec![Vec::new(); f.len()];
        for (j, (_, fj)) in pieces.iter().enumerate() {
            for u in fj.iter() {
                if let Ok(pos) = f.binary_search(u) {
                    owners[pos].push(j as u16);
                }
            }
        }
        let threshold: Vec<f64> = pieces
            .iter()
            .map(|(l, _)| (800.0 + self.corona.eta) * self.c0 * l)
            .collect();
        let members = self.catalog.len();
        let centers = strided_sample(f.len(), Some(self.cfg.max_centers));
        let rows: Vec<(f64, f64, f64, usize, CaseCounts)> = centers
            .par_iter()
            .map(|&c| {
                let ball = cloud.index().ball(cloud.point(c), hi);
                let mut total = 0.0;
                let mut per = vec![0.0; members];
                let mut first: Vec<f64> = vec![f64::INFINITY; pieces.len()];
                let mut at = 0;
                let mut row = (f64::INFINITY, 0.0f64, f64::INFINITY, 0usize, CaseCounts::default());
                for &r in &radii {
                    while at < ball.len() && ball[at].1 <= r {
                        let (i, dist) = ball[at];
                        let w = cloud.weight(i);
                        total += w;
                        let mut mask = self.univ.on[f[i] as usize];
                        while mask != 0 {
                            let k = mask.trailing_zeros() as usize;
                            per[k] += w;
                            mask &= mask - 1;
                        }
                        for &j in &owners[i] {
                            first[j as usize] = first[j as usize].min(dist);
                        }
                        at += 1;
                    }
                    let rd = r.powf(d);
                    row.0 = row.0.min(total / rd);
                    row.1 = row.1.max(total / rd);
                    row.2 = row.2.min(per.iter().copied().fold(0.0, f64::max) / rd);
                    let t1 = pieces
                        .iter()
                        .enumerate()
                        .filter(|(j, (l, _))| first[*j] <= r && *l > r)
                        .count();
                    row.3 = row.3.max(t1);
                    if in_f0[c] || owners[c].is_empty() {
                        row.4.alpha += 1;
                    } else if r < threshold[owners[c][0] as usize] {
                        row.4.beta += 1;
                    } else {
                        row.4.gamma += 1;
                    }
                }
                row
            })
            .collect();
        let mut ev = Eval {
            diam: cloud.diameter(),
            lower: f64::INFINITY,
            upper: 0.0,
            theta: f64::INFINITY,
            t1_max: 0,
            cases: CaseCounts::default(),
        };
        for r in rows {
            ev.lower = ev.lower.min(r.0);
            ev.upper = ev.upper.max(r.1);
            ev.theta = ev.theta.min(r.2);
            ev.t1_max = ev.t1_max.max(r.3);
            ev.cases.alpha += r.4.alpha;
            ev.cases.beta += r.4.beta;
            ev.cases.gamma += r.4.gamma;
        }
        ev
    }
}
