//! Discrete measures on cubes, Carleson norms, packing and the stopping-time
//! extrapolation.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dyadic::{check_family, DyadicTree};
use crate::error::{Error, Result};

/// Constant `C` of the extrapolation bound `‖𝔪_F‖ ≤ C b`.
///
/// The stopping rule below stops at the first cube where the accumulated
/// `Σ α_P / μ(P)` along the path from the top exceeds `2b`, so every point of
/// a cube in the sawtooth sees at most `2b` along its chain.
pub const EXTRAPOLATION_C: f64 = 2.0;

/// Relative slack for the rounding in sums of nonnegative terms.
pub const ROUNDING: f64 = 1e-12;

/// Cubes lighter than this fraction of the total mass are skipped in suprema.
pub const MASS_FLOOR: f64 = 1e-12;

/// Coefficients `α_Q ≥ 0` indexed by cube id.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    alpha: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(tree: &DyadicTree, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != tree.len() {
            return Err(Error::invalid(format!(
                "{} coefficients for {} cubes",
                alpha.len(),
                tree.len()
            )));
        }
        if let Some(q) = alpha.iter().position(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid(format!("α at cube {q} is {}", alpha[q])));
        }
        Ok(DiscreteMeasure { alpha })
    }

    pub fn zero(tree: &DyadicTree) -> Self {
        DiscreteMeasure {
            alpha: vec![0.0; tree.len()],
        }
    }

    /// Measure with `α_Q = μ(Q)` on the listed cubes and zero elsewhere.
    pub fn indicator(tree: &DyadicTree, cubes: &[usize]) -> Self {
        let mut alpha = vec![0.0; tree.len()];
        for &q in cubes {
            alpha[q] = tree.mass(q);
        }
        DiscreteMeasure { alpha }
    }

    pub fn alpha(&self, q: usize) -> f64 {
        self.alpha[q]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.alpha
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "cube_id,alpha")?;
        for (q, a) in self.alpha.iter().enumerate() {
            if *a != 0.0 {
                writeln!(w, "{q},{a:?}")?;
            }
        }
        Ok(())
    }

    /// Reads `cube_id,alpha` rows; absent cubes carry zero.
    pub fn read_csv(tree: &DyadicTree, r: impl BufRead) -> Result<Self> {
        let mut alpha = vec![0.0; tree.len()];
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 || line.is_empty() {
                continue;
            }
            let (q, a) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected cube_id,alpha", i + 1)))?;
            let q: usize = q
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad cube id", i + 1)))?;
            let a: f64 = a
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad coefficient", i + 1)))?;
            if q >= tree.len() {
                return Err(Error::invalid(format!("line {}: unknown cube {q}", i + 1)));
            }
            alpha[q] += a;
        }
        Self::new(tree, alpha)
    }
}

/// `𝔪(𝔻') = Σ_{Q ∈ 𝔻'} α_Q`.
pub fn measure_of(m: &DiscreteMeasure, cubes: impl IntoIterator<Item = usize>) -> f64 {
    cubes.into_iter().map(|q| m.alpha[q]).sum()
}

/// Flags the cubes lying inside some member of `family`.
pub fn family_region(tree: &DyadicTree, family: &[usize]) -> Vec<bool> {
    let mut inside = vec![false; tree.len()];
    for &f in family {
        inside[f] = true;
    }
    for k in tree.k_min()..=tree.k_max() {
        for &q in tree.level(k) {
            if let Some(p) = tree.cube(q).parent {
                if inside[p] {
                    inside[q] = true;
                }
            }
        }
    }
    inside
}

/// `𝔪_F(𝔻_Q)` for every cube, by one bottom-up pass.
pub fn subtree_sums(tree: &DyadicTree, m: &DiscreteMeasure, family: &[usize]) -> Vec<f64> {
    let inside = family_region(tree, family);
    let mut sums = vec![0.0; tree.len()];
    for q in tree.bottom_up() {
        let own = if inside[q] { 0.0 } else { m.alpha[q] };
        let kids: f64 = tree.cube(q).children.iter().map(|&c| sums[c]).sum();
        sums[q] = own + kids;
    }
    sums
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    pub witness: Option<usize>,
}

fn check_disjoint(tree: &DyadicTree, family: &[usize]) -> Result<()> {
    for &f in family {
        if f >= tree.len() {
            return Err(Error::invalid(format!("unknown cube {f}")));
        }
    }
    for &root in tree.roots() {
        let inside: Vec<usize> = family
            .iter()
            .copied()
            .filter(|&f| tree.is_within(f, root))
            .collect();
        check_family(tree, root, &inside)?;
    }
    Ok(())
}

/// `‖𝔪_F‖_{𝒞(Q0)} = sup_{Q ⊆ Q0} 𝔪_F(𝔻_Q)/μ(Q)`, or the supremum over every
/// cube when `q0` is `None`.
pub fn carleson_norm(
    tree: &DyadicTree,
    m: &DiscreteMeasure,
    family: &[usize],
    q0: Option<usize>,
) -> Result<NormReport> {
    match q0 {
        Some(q) => check_family(tree, q, family)?,
        None => check_disjoint(tree, family)?,
    }
    let sums = subtree_sums(tree, m, family);
    let floor = MASS_FLOOR * tree.set().total_mass();
    let range: Vec<usize> = match q0 {
        Some(q) => tree.descendants(q),
        None => (0..tree.len()).collect(),
    };
    let mut best = NormReport {
        value: 0.0,
        witness: None,
    };
    for q in range {
        let mu = tree.mass(q);
        if mu < floor {
            continue;
        }
        let ratio = sums[q] / mu;
        if best.witness.is_none() || ratio > best.value {
            best = NormReport {
                value: ratio,
                witness: Some(q),
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingReport {
    pub worst_ratio: f64,
    pub witness: Option<usize>,
    pub bound: f64,
    pub pass: bool,
}

/// Checks `Σ_{Q' ⊆ Q marked} μ(Q') ≤ C_pack μ(Q)` for every cube.
pub fn packing_check(tree: &DyadicTree, marked: &[usize], c_pack: f64) -> PackingReport {
    let m = DiscreteMeasure::indicator(tree, marked);
    let sums = subtree_sums(tree, &m, &[]);
    let floor = MASS_FLOOR * tree.set().total_mass();
    let mut worst = 0.0;
    let mut witness = None;
    for q in 0..tree.len() {
        let mu = tree.mass(q);
        if mu < floor {
            continue;
        }
        let ratio = sums[q] / mu;
        if witness.is_none() || ratio > worst {
            worst = ratio;
            witness = Some(q);
        }
    }
    PackingReport {
        worst_ratio: worst,
        witness,
        bound: c_pack,
        pass: worst <= c_pack * (1.0 + ROUNDING),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationResult {
    pub family_f: Vec<usize>,
    pub sawtooth_norm: f64,
    pub bad_union_mass: f64,
    pub bad_subfamily: Vec<usize>,
    /// `sawtooth_norm / b`, the constant realised on this input.
    pub measured_c: f64,
    /// `bad_union_mass / μ(Q)`.
    pub bad_ratio: f64,
    /// `(a + b)/(a + 2b)`.
    pub bad_bound: f64,
    pub norm_ok: bool,
    pub bad_ok: bool,
}

/// Stopping-time decomposition of `𝔻_Q` for a measure with
/// `𝔪(𝔻_Q) ≤ (a + b) μ(Q)`.
///
/// `F` is the family of maximal cubes `Q' ⊆ Q` (possibly `Q` itself) where
/// `Σ_{Q' ⊆ P ⊆ Q} α_P/μ(P)` first exceeds `2b`. Both conclusions are
/// checked before returning.
pub fn extrapolate(
    tree: &DyadicTree,
    m: &DiscreteMeasure,
    q: usize,
    a: f64,
    b: f64,
) -> Result<ExtrapolationResult> {
    if !(a >= 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::invalid(format!("need a ≥ 0 and b > 0, got a = {a}, b = {b}")));
    }
    let below = tree.descendants(q);
    let total = measure_of(m, below.iter().copied());
    let mu_q = tree.mass(q);
    if total > (a + b) * mu_q * (1.0 + ROUNDING) {
        return Err(Error::invalid(format!(
            "𝔪(𝔻_Q) = {total} exceeds (a + b) μ(Q) = {}",
            (a + b) * mu_q
        )));
    }
    let mut family = Vec::new();
    let mut stack = vec![(q, 0.0)];
    while let Some((p, acc)) = stack.pop() {
        let s = acc + m.alpha[p] / tree.mass(p);
        if s > 2.0 * b {
            family.push(p);
            continue;
        }
        for &c in tree.cube(p).children.iter().rev() {
            stack.push((c, s));
        }
    }
    family.sort_unstable();

    let sums = subtree_sums(tree, m, &[]);
    let bad_subfamily: Vec<usize> = family
        .iter()
        .copied()
        .filter(|&f| sums[f] - m.alpha[f] > a * tree.mass(f))
        .collect();
    let bad_union_mass: f64 = bad_subfamily.iter().map(|&f| tree.mass(f)).sum();
    let norm = carleson_norm(tree, m, &family, Some(q))?.value;
    let bad_bound = (a + b) / (a + 2.0 * b);
    let bad_ratio = bad_union_mass / mu_q;
    let res = ExtrapolationResult {
        measured_c: norm / b,
        norm_ok: norm <= EXTRAPOLATION_C * b * (1.0 + ROUNDING),
        bad_ok: bad_ratio <= bad_bound * (1.0 + ROUNDING),
        family_f: family,
        sawtooth_norm: norm,
        bad_union_mass,
        bad_subfamily,
        bad_ratio,
        bad_bound,
    };
    if !res.norm_ok {
        return Err(Error::contract(format!(
            "sawtooth norm {norm} exceeds {EXTRAPOLATION_C} b = {}",
            EXTRAPOLATION_C * b
        )));
    }
    if !res.bad_ok {
        return Err(Error::contract(format!(
            "bad mass ratio {bad_ratio} exceeds (a+b)/(a+2b) = {bad_bound}"
        )));
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::build_tree;
    use crate::metric::Metric;
    use crate::space::WeightedSet;
    use proptest::prelude::*;

    fn interval_tree(bits: u32) -> DyadicTree {
        let n = 1usize << bits;
        let h = 1.0 / n as f64;
        let coords = (0..n).map(|i| i as f64 * h).collect();
        let set = WeightedSet::new(Metric::Euclidean { n: 1 }, coords, vec![h; n], 1.0, (2.0 * h, 1.0))
            .unwrap();
        build_tree(&set).unwrap()
    }

    /// Definitional double loop.
    fn brute_norm(tree: &DyadicTree, m: &DiscreteMeasure, family: &[usize], q0: usize) -> f64 {
        let mut best: f64 = 0.0;
        for q in 0..tree.len() {
            if !tree.is_within(q, q0) {
                continue;
            }
            let mut s = 0.0;
            for p in 0..tree.len() {
                let cut = family.iter().any(|&f| tree.is_within(p, f));
                if tree.is_within(p, q) && !cut {
                    s += m.alpha(p);
                }
            }
            best = best.max(s / tree.mass(q));
        }
        best
    }

    #[test]
    fn trivial_norms() {
        let tree = interval_tree(7);
        let root = tree.roots()[0];
        let zero = DiscreteMeasure::zero(&tree);
        assert_eq!(carleson_norm(&tree, &zero, &[], Some(root)).unwrap().value, 0.0);
        let leaves = DiscreteMeasure::indicator(&tree, tree.leaves());
        assert!((carleson_norm(&tree, &leaves, &[], None).unwrap().value - 1.0).abs() < 1e-12);
        let all: Vec<usize> = (0..tree.len()).collect();
        let full = DiscreteMeasure::indicator(&tree, &all);
        let depth = (tree.k_max() - tree.k_min() + 1) as f64;
        let v = carleson_norm(&tree, &full, &[], Some(root)).unwrap();
        assert!((v.value - depth).abs() < 1e-9);
        assert_eq!(v.witness, Some(root));
        assert!((measure_of(&full, tree.descendants(root)) - depth * tree.mass(root)).abs() < 1e-9);
        assert_eq!(measure_of(&full, []), 0.0);
    }

    #[test]
    fn packing_trivial_cases() {
        let tree = interval_tree(7);
        assert_eq!(packing_check(&tree, &[], 1.0).worst_ratio, 0.0);
        let lvl = tree.level(tree.k_min() + 2).to_vec();
        let r = packing_check(&tree, &lvl, 1.0);
        assert!((r.worst_ratio - 1.0).abs() < 1e-12 && r.pass);
        let all: Vec<usize> = (0..tree.len()).collect();
        let depth = (tree.k_max() - tree.k_min() + 1) as f64;
        let r = packing_check(&tree, &all, depth - 0.5);
        assert!((r.worst_ratio - depth).abs() < 1e-9 && !r.pass);
    }

    #[test]
    fn zero_measure_extrapolates_to_nothing() {
        let tree = interval_tree(7);
        let root = tree.roots()[0];
        let r = extrapolate(&tree, &DiscreteMeasure::zero(&tree), root, 1.0, 0.125).unwrap();
        assert!(r.family_f.is_empty());
        assert_eq!(r.sawtooth_norm, 0.0);
        assert_eq!(r.bad_union_mass, 0.0);
    }

    #[test]
    fn mass_on_top_cube_only() {
        let tree = interval_tree(6);
        let root = tree.roots()[0];
        for (a, b) in [(0.0, 0.125), (1.0, 0.125), (0.1, 0.5)] {
            let mut alpha = vec![0.0; tree.len()];
            alpha[root] = (a + b) * tree.mass(root);
            let m = DiscreteMeasure::new(&tree, alpha).unwrap();
            let r = extrapolate(&tree, &m, root, a, b).unwrap();
            // either nothing stops, or the top cube itself does
            assert!(r.family_f.is_empty() || r.family_f == vec![root]);
            assert!(r.sawtooth_norm <= EXTRAPOLATION_C * b);
            assert!(r.bad_subfamily.is_empty());
        }
    }

    #[test]
    fn rejects_violated_precondition() {
        let tree = interval_tree(5);
        let root = tree.roots()[0];
        let all: Vec<usize> = (0..tree.len()).collect();
        let m = DiscreteMeasure::indicator(&tree, &all);
        assert!(extrapolate(&tree, &m, root, 0.5, 0.125).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let tree = interval_tree(5);
        let m = DiscreteMeasure::indicator(&tree, tree.leaves());
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = DiscreteMeasure::read_csv(&tree, &buf[..]).unwrap();
        assert_eq!(back, m);
    }

    fn random_measure(tree: &DyadicTree, raw: &[f64], sparse: &[bool]) -> DiscreteMeasure {
        let alpha = (0..tree.len())
            .map(|q| {
                if sparse[q % sparse.len()] {
                    0.0
                } else {
                    raw[q % raw.len()] * tree.mass(q)
                }
            })
            .collect();
        DiscreteMeasure::new(tree, alpha).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aggregated_norm_matches_double_loop(
            raw in prop::collection::vec(0.0f64..3.0, 1..40),
            sparse in prop::collection::vec(any::<bool>(), 1..9),
            pick in 0usize..1000,
        ) {
            let tree = interval_tree(6);
            let m = random_measure(&tree, &raw, &sparse);
            let root = tree.roots()[0];
            let lvl = tree.level(tree.k_min() + 2);
            let fam = vec![lvl[pick % lvl.len()]];
            for family in [vec![], fam] {
                let fast = carleson_norm(&tree, &m, &family, Some(root)).unwrap().value;
                let slow = brute_norm(&tree, &m, &family, root);
                prop_assert!((fast - slow).abs() <= 1e-12 * slow.max(1.0));
            }
        }

        #[test]
        fn finer_family_never_increases_norm(
            raw in prop::collection::vec(0.0f64..3.0, 1..40),
            pick in 0usize..1000,
        ) {
            let tree = interval_tree(6);
            let m = random_measure(&tree, &raw, &[false]);
            let root = tree.roots()[0];
            let lvl = tree.level(tree.k_min() + 2);
            let q = lvl[pick % lvl.len()];
            let coarse = carleson_norm(&tree, &m, &tree.cube(q).children, Some(root)).unwrap().value;
            let finer = carleson_norm(&tree, &m, &[q], Some(root)).unwrap().value;
            prop_assert!(finer <= coarse + 1e-12);
        }

        #[test]
        fn measure_is_additive(raw in prop::collection::vec(0.0f64..3.0, 1..40), split in 0usize..200) {
            let tree = interval_tree(5);
            let m = random_measure(&tree, &raw, &[false]);
            let n = tree.len();
            let cut = split % n;
            let whole = measure_of(&m, 0..n);
            let parts = measure_of(&m, 0..cut) + measure_of(&m, cut..n);
            prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
        }

        #[test]
        fn extrapolation_contract(
            raw in prop::collection::vec(0.0f64..3.0, 1..40),
            sparse in prop::collection::vec(any::<bool>(), 1..9),
            a in 0.0f64..4.0,
            fill in 0.01f64..1.0,
        ) {
            let tree = interval_tree(6);
            let root = tree.roots()[0];
            let b = 1.0 / (4.0 * EXTRAPOLATION_C);
            let m0 = random_measure(&tree, &raw, &sparse);
            let total = measure_of(&m0, tree.descendants(root));
            prop_assume!(total > 0.0);
            let scale = fill * (a + b) * tree.mass(root) / total;
            let m = DiscreteMeasure::new(&tree, m0.coefficients().iter().map(|x| x * scale).collect()).unwrap();
            let r = extrapolate(&tree, &m, root, a, b).unwrap();
            // recompute both conclusions by exhaustive summation
            let norm = brute_norm(&tree, &m, &r.family_f, root);
            prop_assert!(norm <= EXTRAPOLATION_C * b * (1.0 + 1e-12));
            let mut bad = 0.0;
            for &f in &r.family_f {
                let below: f64 = (0..tree.len())
                    .filter(|&p| p != f && tree.is_within(p, f))
                    .map(|p| m.alpha(p))
                    .sum();
                if below > a * tree.mass(f) {
                    bad += tree.mass(f);
                }
            }
            prop_assert!(bad / tree.mass(root) <= (a + b) / (a + 2.0 * b) * (1.0 + 1e-12));
        }
    }
}
