//! Deterministic sample clouds: flat pieces, Lipschitz graphs, unions.

use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::space::WeightedSet;

/// Lattice sample of `[0, side)^d × {0}^{n-d}` with spacing `h` and weights `h^d`.
/// Scale range `(2h, side/2)`.
pub fn plane(n: usize, d: usize, side: f64, h: f64) -> Result<WeightedSet> {
    if d == 0 || d > n {
        return Err(Error::invalid(format!("need 1 ≤ d ≤ n, got d = {d}, n = {n}")));
    }
    let m = (side / h).round() as usize;
    let count = m.pow(d as u32);
    let mut coords = Vec::with_capacity(count * n);
    for idx in 0..count {
        let mut rest = idx;
        let mut p = vec![0.0; n];
        // first axis varies slowest so index order follows lexicographic order
        for axis in (0..d).rev() {
            p[axis] = (rest % m) as f64 * h;
            rest /= m;
        }
        coords.extend(p);
    }
    WeightedSet::new(
        Metric::Euclidean { n },
        coords,
        vec![h.powi(d as i32); count],
        d as f64,
        (2.0 * h, side / 2.0),
    )
}

/// Zigzag of slope `±lambda` and tooth width `tooth`, vanishing at multiples of `2·tooth`.
pub fn tent(x: f64, lambda: f64, tooth: f64) -> f64 {
    let period = 2.0 * tooth;
    let u = x.rem_euclid(period);
    lambda * if u <= tooth { u } else { period - u }
}

/// Graph of [`tent`] over `[0, length)` in the plane, sampled at horizontal
/// spacing `h` with arc-length weights.
pub fn lipschitz_graph(lambda: f64, tooth: f64, length: f64, h: f64) -> Result<WeightedSet> {
    let m = (length / h).round() as usize;
    let arc = h * (1.0 + lambda * lambda).sqrt();
    let coords = (0..m)
        .flat_map(|i| {
            let x = i as f64 * h;
            [x, tent(x, lambda, tooth)]
        })
        .collect();
    WeightedSet::new(
        Metric::Euclidean { n: 2 },
        coords,
        vec![arc; m],
        1.0,
        (2.0 * arc, length / 2.0),
    )
}

/// Staircase of flat treads and risers of slope `lambda`, each of width `step`.
pub fn stair(x: f64, lambda: f64, step: f64) -> f64 {
    let period = 2.0 * step;
    let u = x.rem_euclid(period);
    lambda * ((x / period).floor() * step + (u - step).max(0.0))
}

/// Graph of `f` over `[x0, x1)` at horizontal spacing `h`, each point
/// weighted by the length of the chord to its right neighbour.
pub fn graph(
    f: impl Fn(f64) -> f64,
    x0: f64,
    x1: f64,
    h: f64,
    scale_range: (f64, f64),
) -> Result<WeightedSet> {
    let m = ((x1 - x0) / h).round() as usize;
    let pts: Vec<[f64; 2]> = (0..=m)
        .map(|i| {
            let x = x0 + i as f64 * h;
            [x, f(x)]
        })
        .collect();
    let weights = pts.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).collect();
    let coords = pts[..m].iter().flatten().copied().collect();
    WeightedSet::new(Metric::Euclidean { n: 2 }, coords, weights, 1.0, scale_range)
}

/// Two copies of the `d`-plane sample in `ℝ^n`, the second shifted by `sep`
/// along the last axis.
pub fn two_planes(n: usize, d: usize, side: f64, h: f64, sep: f64) -> Result<WeightedSet> {
    if d >= n {
        return Err(Error::invalid("two parallel planes need codimension at least 1"));
    }
    let one = plane(n, d, side, h)?;
    let mut coords = one.coords().to_vec();
    let shifted: Vec<f64> = one
        .coords()
        .chunks(n)
        .flat_map(|p| {
            let mut q = p.to_vec();
            q[n - 1] += sep;
            q
        })
        .collect();
    coords.extend(shifted);
    let mut weights = one.weights().to_vec();
    weights.extend_from_slice(one.weights());
    WeightedSet::new(
        one.metric(),
        coords,
        weights,
        d as f64,
        (2.0 * h, side / 2.0),
    )
}

/// Union of clouds sharing metric and dimension; the scale range is given.
pub fn union(parts: &[&WeightedSet], scale_range: (f64, f64)) -> Result<WeightedSet> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("empty union"))?;
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for p in parts {
        if p.metric() != first.metric() || p.dim_d() != first.dim_d() {
            return Err(Error::invalid("union of clouds of different kinds"));
        }
        coords.extend_from_slice(p.coords());
        weights.extend_from_slice(p.weights());
    }
    WeightedSet::new(first.metric(), coords, weights, first.dim_d(), scale_range)
}

/// The cloud moved by `x ↦ R x + shift`, `R` an orthogonal matrix given row-major.
pub fn rigid_motion(set: &WeightedSet, rot: &[f64], shift: &[f64]) -> Result<WeightedSet> {
    let dim = set.metric().dim();
    if rot.len() != dim * dim || shift.len() != dim {
        return Err(Error::invalid("rotation and shift do not match the dimension"));
    }
    let coords = set
        .coords()
        .chunks(dim)
        .flat_map(|p| {
            (0..dim)
                .map(|i| (0..dim).map(|j| rot[i * dim + j] * p[j]).sum::<f64>() + shift[i])
                .collect::<Vec<_>>()
        })
        .collect();
    WeightedSet::assemble(
        set.metric(),
        coords,
        set.weights().to_vec(),
        set.dim_d(),
        set.scale_range(),
    )
}

/// A cloud together with approximating clouds that extend well past it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub set: WeightedSet,
    pub catalog: Vec<WeightedSet>,
}

/// Reach of the approximants beyond `[0, 1)` on each side.
const REACH: f64 = 3.5;

fn horizontal(y: f64, x0: f64, x1: f64, h: f64, scale_range: (f64, f64)) -> Result<WeightedSet> {
    graph(|_| y, x0, x1, h, scale_range)
}

/// The unit segment, approximated by itself with a long scale range.
pub fn line_scene(h: f64) -> Result<Scene> {
    let set = horizontal(0.0, 0.0, 1.0, h, (2.0 * h, 0.25))?;
    let catalog = vec![set.with_scale_range((2.0 * h, 4.0))?];
    Ok(Scene { set, catalog })
}

/// Two parallel unit segments `sep` apart, approximated by the two full lines.
pub fn two_lines_scene(h: f64, sep: f64) -> Result<Scene> {
    let a = horizontal(0.0, 0.0, 1.0, h, (2.0 * h, 0.25))?;
    let b = horizontal(sep, 0.0, 1.0, h, (2.0 * h, 0.25))?;
    let set = union(&[&a, &b], (2.0 * h, 0.25))?;
    let catalog = [0.0, sep]
        .iter()
        .map(|&y| horizontal(y, -REACH, 1.0 + REACH, h, (2.0 * h, REACH)))
        .collect::<Result<_>>()?;
    Ok(Scene { set, catalog })
}

/// A [`stair`] graph over `[0, 1)`, approximated by copies of the staircase
/// frozen outside windows of width `3/4` centred at multiples of `1/8`.
pub fn staircase_scene(h: f64, lambda: f64, step: f64) -> Result<Scene> {
    let r_min = 2.0 * h * (1.0 + lambda * lambda).sqrt();
    let set = graph(|x| stair(x, lambda, step), 0.0, 1.0, h, (r_min, 0.25))?;
    let catalog = (0..=8)
        .map(|i| {
            let c = i as f64 / 8.0;
            let f = move |x: f64| stair(x.clamp(c - 0.375, c + 0.375), lambda, step);
            graph(f, -REACH, 1.0 + REACH, h, (r_min, REACH))
        })
        .collect::<Result<_>>()?;
    Ok(Scene { set, catalog })
}

/// A [`tent`] zigzag of half-width `w` over `[0, 1/2)` continued flat over
/// `[1/2, 1)`, approximated by the flat line and by the full line through
/// each straight piece of the zigzag. `1/2` must be a multiple of `2w`.
pub fn teeth_scene(h: f64, lambda: f64, w: f64) -> Result<Scene> {
    let r_min = 2.0 * h * (1.0 + lambda * lambda).sqrt();
    let f = move |x: f64| if x < 0.5 { tent(x, lambda, w) } else { 0.0 };
    let set = graph(f, 0.0, 1.0, h, (r_min, 0.25))?;
    let mut catalog = vec![horizontal(0.0, -REACH, 1.0 + REACH, h, (r_min, REACH))?];
    let pieces = (0.5 / w).round() as usize;
    for i in 0..pieces {
        let x0 = i as f64 * w;
        let (slope, y0) = if i % 2 == 0 { (lambda, 0.0) } else { (-lambda, lambda * w) };
        catalog.push(graph(
            move |x| y0 + slope * (x - x0),
            -REACH,
            1.0 + REACH,
            h,
            (r_min, REACH),
        )?);
    }
    Ok(Scene { set, catalog })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::regularity_check;

    #[test]
    fn plane_is_regular() {
        let p = plane(3, 2, 1.0, 1.0 / 32.0).unwrap();
        assert_eq!(p.len(), 1024);
        let rep = regularity_check(&p).unwrap();
        assert!(rep.constant_c < 8.0, "C = {}", rep.constant_c);
    }

    #[test]
    fn flat_lipschitz_graph_is_a_line() {
        let g = lipschitz_graph(0.0, 0.1, 1.0, 0.01).unwrap();
        let l = plane(2, 1, 1.0, 0.01).unwrap();
        assert_eq!(g.coords(), l.coords());
        assert_eq!(g.weights(), l.weights());
    }

    #[test]
    fn stair_treads_and_risers() {
        assert_eq!(stair(0.5, 1.0, 1.0), 0.0);
        assert_eq!(stair(1.5, 1.0, 1.0), 0.5);
        assert_eq!(stair(2.5, 1.0, 1.0), 1.0);
        assert_eq!(stair(-0.5, 1.0, 1.0), -0.5);
        let g = graph(|x| stair(x, 0.5, 0.25), 0.0, 1.0, 1.0 / 64.0, (0.05, 0.5)).unwrap();
        assert!((g.total_mass() - (0.5 + 0.5 * 1.25f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn tent_has_slope_lambda() {
        assert_eq!(tent(0.0, 2.0, 1.0), 0.0);
        assert_eq!(tent(0.5, 2.0, 1.0), 1.0);
        assert_eq!(tent(1.5, 2.0, 1.0), 1.0);
        assert_eq!(tent(2.0, 2.0, 1.0), 0.0);
    }
}
