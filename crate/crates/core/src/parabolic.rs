//! Graphs of Lip(1,1/2) functions in the parabolic space `ℝⁿ⁺¹`, the
//! half-order time derivative, parabolic BMO, Lewis–Silver type graphs and
//! the pipeline from a coronization to the parabolic geometric lemmas.
//!
//! A graph is sampled on a uniform grid of `ℝ^{n−1} × ℝ` with `Δt = Δx²`.
//! Grid values are stored with time fastest, so every spatial node owns a
//! contiguous time column.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta::{
    bwglem_check, glem_from_values, transfer_check, wglem_check, Beta, BetaKind, BetaOptions, LemmaReport, PlaneFamily,
    TransferConfig, TransferReport,
};
use crate::bigpieces::{corona_to_bp2, EngineConfig};
use crate::corona::{build_corona, ApproximantCatalog, CoronaDecomposition};
use crate::dyadic::{build_tree, DyadicTree};
use crate::error::{Error, Result};
use crate::fixtures::{union, Scene};
use crate::metric::Metric;
use crate::space::{regularity_check_with, RegularityOptions, WeightedSet};

/// `ĉ` in `D^t_{1/2} ψ(x,t) = ĉ ∫ (ψ(x,s) − ψ(x,t)) |s − t|^{−3/2} ds`, fixed so
/// that `D^t_{1/2}` is the Fourier multiplier `|τ|^{1/2}`.
pub const C_HAT: f64 = -0.199_471_140_200_716_35;

/// Uniform parabolic grid: `nx` nodes per spatial axis at spacing `dx`,
/// `nt` time nodes at spacing `dt = dx²`, starting at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Ambient space is `ℝⁿ⁺¹`; functions live on `ℝ^{n−1} × ℝ`.
    pub n: usize,
    pub nx: usize,
    pub nt: usize,
    pub dx: f64,
}

impl Grid {
    pub fn new(n: usize, nx: usize, nt: usize, dx: f64) -> Result<Self> {
        if n < 1 || nx < 2 || nt < 3 || !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::invalid(format!("bad grid n = {n}, nx = {nx}, nt = {nt}, dx = {dx}")));
        }
        Ok(Grid { n, nx, nt, dx })
    }

    /// The unit box: `nx` spatial nodes at `Δx = 1/nx` and `nx²` time nodes.
    pub fn unit(n: usize, nx: usize) -> Result<Self> {
        Self::new(n, nx, nx * nx, 1.0 / nx as f64)
    }

    pub fn dt(&self) -> f64 {
        self.dx * self.dx
    }

    /// Number of spatial nodes.
    pub fn columns(&self) -> usize {
        self.nx.pow((self.n - 1) as u32)
    }

    pub fn len(&self) -> usize {
        self.columns() * self.nt
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spatial multi-index of a column.
    pub fn column_index(&self, c: usize) -> Vec<usize> {
        let mut out = vec![0; self.n - 1];
        let mut rest = c;
        for slot in out.iter_mut().rev() {
            *slot = rest % self.nx;
            rest /= self.nx;
        }
        out
    }

    pub fn column_of(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.nx + i)
    }

    pub fn x(&self, c: usize) -> Vec<f64> {
        self.column_index(c).into_iter().map(|i| i as f64 * self.dx).collect()
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    /// Evaluates `f(x, t)` on every node.
    pub fn sample(&self, f: impl Fn(&[f64], f64) -> f64 + Sync) -> Vec<f64> {
        (0..self.columns())
            .into_par_iter()
            .flat_map_iter(|c| {
                let x = self.x(c);
                (0..self.nt).map(move |j| (x.clone(), j))
            })
            .map(|(x, j)| f(&x, self.t(j)))
            .collect()
    }

    /// The same nodes under `(x, t) ↦ (ρx, ρ²t)`.
    pub fn dilated(&self, rho: f64) -> Self {
        Grid { dx: self.dx * rho, ..*self }
    }
}

/// Values on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        Ok(GridField { grid, values })
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.values[c * self.grid.nt..(c + 1) * self.grid.nt]
    }

    pub fn at(&self, c: usize, j: usize) -> f64 {
        self.values[c * self.grid.nt + j]
    }

    /// CSV rows `x...,t,psi`.
    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..self.grid.n).map(|i| format!("x{i}")).collect();
        header.push("t".into());
        header.push("psi".into());
        out.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
        for c in 0..self.grid.columns() {
            let x = self.grid.x(c);
            for j in 0..self.grid.nt {
                let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                row.push(self.grid.t(j).to_string());
                row.push(self.at(c, j).to_string());
                out.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// A sampled `ψ : ℝ^{n−1} × ℝ → ℝ` with its measured Lip(1,1/2) constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lip112Graph {
    pub psi: GridField,
    pub lip_constant_b: f64,
}

/// Spatial offsets and time offsets scanned when measuring moduli.
const SPACE_WINDOW: i64 = 4;
const TIME_WINDOW: usize = 64;

fn time_offsets(nt: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=TIME_WINDOW.min(nt - 1)).collect();
    let mut s = TIME_WINDOW * 2;
    while s < nt {
        v.push(s);
        v.push(s + s / 2);
        s *= 2;
    }
    v.retain(|&s| s < nt);
    v.push(nt - 1);
    v.sort_unstable();
    v.dedup();
    v
}

fn space_offsets(n: usize) -> Vec<Vec<i64>> {
    let dims = n - 1;
    let side = (2 * SPACE_WINDOW + 1) as usize;
    (0..side.pow(dims as u32))
        .map(|mut code| {
            (0..dims)
                .map(|_| {
                    let o = (code % side) as i64 - SPACE_WINDOW;
                    code /= side;
                    o
                })
                .collect()
        })
        .collect()
}

/// `sup |ψ(x,t) − ψ(y,s)| / (|x − y| + |t − s|^{1/2})` over node pairs with
/// spatial offsets up to 4 cells per axis and time offsets up to 64 cells or
/// near powers of two beyond.
pub fn lip_constant(psi: &GridField) -> f64 {
    let g = psi.grid;
    let dts = time_offsets(g.nt);
    let dxs = space_offsets(g.n);
    (0..g.columns())
        .into_par_iter()
        .map(|c| {
            let base = g.column_index(c);
            let mut best: f64 = 0.0;
            for o in &dxs {
                let mut other = Vec::with_capacity(base.len());
                let mut ok = true;
                for (b, &v) in base.iter().zip(o) {
                    let i = *b as i64 + v;
                    if i < 0 || i >= g.nx as i64 {
                        ok = false;
                        break;
                    }
                    other.push(i as usize);
                }
                // each unordered pair once
                if !ok || o.iter().find(|&&v| v != 0).map_or(false, |&v| v < 0) {
                    continue;
                }
                let c2 = g.column_of(&other);
                let dist_x = o.iter().map(|&v| (v as f64 * g.dx).powi(2)).sum::<f64>().sqrt();
                let a = psi.column(c);
                let b = psi.column(c2);
                for &s in &dts {
                    let denom = dist_x + (s as f64 * g.dt()).sqrt();
                    if denom == 0.0 {
                        continue;
                    }
                    for j in 0..g.nt - s {
                        best = best.max((a[j] - b[j + s]).abs() / denom);
                        if dist_x > 0.0 {
                            best = best.max((a[j + s] - b[j]).abs() / denom);
                        }
                    }
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// `sup_t sup_{x≠y} |ψ(x,t) − ψ(y,t)|/|x − y|` over spatial offsets up to 4
/// cells per axis.
pub fn spatial_lipschitz(psi: &GridField) -> f64 {
    let g = psi.grid;
    let dxs = space_offsets(g.n);
    (0..g.columns())
        .into_par_iter()
        .map(|c| {
            let base = g.column_index(c);
            let mut best: f64 = 0.0;
            for o in &dxs {
                if o.iter().find(|&&v| v != 0).map_or(true, |&v| v < 0) {
                    continue;
                }
                let other: Option<Vec<usize>> = base
                    .iter()
                    .zip(o)
                    .map(|(b, &v)| {
                        let i = *b as i64 + v;
                        (i >= 0 && i < g.nx as i64).then_some(i as usize)
                    })
                    .collect();
                let Some(other) = other else { continue };
                let dist = o.iter().map(|&v| (v as f64 * g.dx).powi(2)).sum::<f64>().sqrt();
                let (a, b) = (psi.column(c), psi.column(g.column_of(&other)));
                for j in 0..g.nt {
                    best = best.max((a[j] - b[j]).abs() / dist);
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

impl Lip112Graph {
    pub fn new(psi: GridField) -> Result<Self> {
        if psi.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite ψ value"));
        }
        let b = lip_constant(&psi);
        if !b.is_finite() {
            return Err(Error::Contract("Lip(1,1/2) constant is not finite".into()));
        }
        Ok(Lip112Graph { psi, lip_constant_b: b })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64], f64) -> f64 + Sync) -> Result<Self> {
        Self::new(GridField::new(grid, grid.sample(f))?)
    }

    pub fn grid(&self) -> Grid {
        self.psi.grid
    }

    /// The image under `(x, y, t) ↦ (ρx, ρy, ρ²t)`; `b` is unchanged.
    pub fn dilated(&self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::invalid(format!("dilation ρ = {rho} must be positive")));
        }
        let values = self.psi.values.iter().map(|v| rho * v).collect();
        Self::new(GridField::new(self.psi.grid.dilated(rho), values)?)
    }

    /// The graph `{(x, ψ(x,t), t)}` with weights `Δx^{n−1} Δt √(1 + |∇ₓψ|²)`,
    /// resolved from twice the largest nearest-neighbour gap up to `r_max`.
    pub fn cloud(&self, r_max: f64) -> Result<WeightedSet> {
        let g = self.grid();
        let dims = g.n - 1;
        let cell = g.dx.powi(dims as i32) * g.dt();
        let mut coords = Vec::with_capacity(g.len() * (g.n + 1));
        let mut weights = Vec::with_capacity(g.len());
        for c in 0..g.columns() {
            let idx = g.column_index(c);
            let x = g.x(c);
            let neighbours: Vec<(Option<usize>, Option<usize>, f64)> = (0..dims)
                .map(|a| {
                    let step = |d: i64| {
                        let i = idx[a] as i64 + d;
                        (i >= 0 && i < g.nx as i64).then(|| {
                            let mut o = idx.clone();
                            o[a] = i as usize;
                            g.column_of(&o)
                        })
                    };
                    let (lo, hi) = (step(-1), step(1));
                    let span = match (lo, hi) {
                        (Some(_), Some(_)) => 2.0 * g.dx,
                        _ => g.dx,
                    };
                    (lo, hi, span)
                })
                .collect();
            for j in 0..g.nt {
                let v = self.psi.at(c, j);
                let mut grad2 = 0.0;
                for &(lo, hi, span) in &neighbours {
                    let a = lo.map_or(v, |l| self.psi.at(l, j));
                    let b = hi.map_or(v, |h| self.psi.at(h, j));
                    grad2 += ((b - a) / span).powi(2);
                }
                coords.extend_from_slice(&x);
                coords.push(v);
                coords.push(g.t(j));
                weights.push(cell * (1.0 + grad2).sqrt());
            }
        }
        let metric = Metric::Parabolic { n: g.n };
        let d = (g.n + 1) as f64;
        let probe = WeightedSet::assemble(metric, coords, weights, d, (1.0, 2.0))?;
        let r_min = 2.0 * probe.max_nn_distance();
        probe.with_scale_range((r_min, r_max.max(2.0 * r_min)))
    }
}

/// Time-step weights of the half derivative: `w[m]` multiplies
/// `g(t ± mΔt)` for `m ≥ 1`, from exact integration of the kernel against
/// the piecewise linear interpolant outside the core `|s − t| < Δt`.
fn half_weights(nt: usize, dt: f64) -> Vec<f64> {
    let p = |a: f64, b: f64| 2.0 * (a.powf(-0.5) - b.powf(-0.5));
    let q = |a: f64, b: f64| 2.0 * (b.sqrt() - a.sqrt()) - a * p(a, b);
    let cell_p: Vec<f64> = (0..nt).map(|m| if m == 0 { 0.0 } else { p(m as f64 * dt, (m + 1) as f64 * dt) }).collect();
    let cell_q: Vec<f64> = (0..nt).map(|m| if m == 0 { 0.0 } else { q(m as f64 * dt, (m + 1) as f64 * dt) / dt }).collect();
    let mut w = vec![0.0; nt];
    for m in 1..nt {
        w[m] = cell_p[m] - cell_q[m] + if m >= 2 { cell_q[m - 1] } else { 0.0 };
    }
    w
}

/// `D^t_{1/2}` of one compactly supported time column.
fn half_column(g: &[f64], w: &[f64], dt: f64) -> Vec<f64> {
    let nt = g.len();
    let at = |i: i64| if i < 0 || i >= nt as i64 { 0.0 } else { g[i as usize] };
    let root = dt.sqrt();
    (0..nt)
        .map(|i| {
            let mut s = 0.0;
            for m in 1..nt {
                let (l, r) = (i as i64 - m as i64, i + m);
                if l < 0 && r >= nt {
                    break;
                }
                s += w[m] * (at(l) + at(r as i64));
            }
            let gi = g[i];
            // core |s − t| < Δt from the local quadratic: (2/3) g'' Δt^{3/2}
            let core = (2.0 / 3.0) * (at(i as i64 + 1) + at(i as i64 - 1) - 2.0 * gi) / root;
            C_HAT * (s - 4.0 * gi / root + core)
        })
        .collect()
}

/// `D^t_{1/2} ψ` on every node.
pub fn half_time_derivative(graph: &Lip112Graph) -> Result<GridField> {
    half_time_derivative_of(&graph.psi)
}

pub fn half_time_derivative_of(psi: &GridField) -> Result<GridField> {
    let g = psi.grid;
    let scale = psi.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // values past the ends are taken as zero; an error of this size is far
    // below the quadrature error
    let tol = 1e-6 * scale.max(f64::MIN_POSITIVE);
    for c in 0..g.columns() {
        let col = psi.column(c);
        if col[0].abs() > tol || col[g.nt - 1].abs() > tol {
            return Err(Error::invalid(format!(
                "ψ is not compactly supported in time: column {c} ends at {} and {}",
                col[0],
                col[g.nt - 1]
            )));
        }
    }
    let w = half_weights(g.nt, g.dt());
    let values: Vec<f64> = (0..g.columns())
        .into_par_iter()
        .flat_map_iter(|c| half_column(psi.column(c), &w, g.dt()))
        .collect();
    GridField::new(g, values)
}

/// Independent quadrature of the half derivative of a smooth `f` supported
/// in `[lo, hi]`, using `u = v²` to remove the singularity.
pub fn half_derivative_oracle(f: impl Fn(f64) -> f64, t: f64, lo: f64, hi: f64, nodes: usize) -> f64 {
    let reach = (t - lo).max(hi - t).max(0.0);
    let v_max = reach.sqrt();
    let ft = f(t);
    // Gauss–Legendre 5-point panels on [0, v_max]
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1, 0.236_926_885_056_189_1];
    let h = v_max / nodes as f64;
    let mut s = 0.0;
    for k in 0..nodes {
        let mid = (k as f64 + 0.5) * h;
        for (x, w) in X.iter().zip(W) {
            let v = mid + 0.5 * h * x;
            let u = v * v;
            s += 0.5 * h * w * 2.0 * (f(t + u) + f(t - u) - 2.0 * ft) / (v * v);
        }
    }
    // beyond the support both values vanish
    let tail = if reach > 0.0 { -4.0 * ft / reach.sqrt() } else { 0.0 };
    C_HAT * (s + tail)
}

/// Mean oscillation of `f` over a box of `2^m` nodes per spatial axis and
/// `4^m` time nodes starting at `(corner, j0)`.
fn box_oscillation(f: &GridField, corner: &[usize], j0: usize, m: u32) -> f64 {
    let g = f.grid;
    let side = 1usize << m;
    let len = 1usize << (2 * m);
    let cols: Vec<usize> = (0..side.pow((g.n - 1) as u32))
        .map(|mut code| {
            let idx: Vec<usize> = corner
                .iter()
                .map(|&c0| {
                    let o = code % side;
                    code /= side;
                    c0 + o
                })
                .collect();
            g.column_of(&idx)
        })
        .collect();
    let count = (cols.len() * len) as f64;
    let mean = cols.iter().map(|&c| f.column(c)[j0..j0 + len].iter().sum::<f64>()).sum::<f64>() / count;
    cols.iter()
        .map(|&c| f.column(c)[j0..j0 + len].iter().map(|v| (v - mean).abs()).sum::<f64>())
        .sum::<f64>()
        / count
}

/// Parabolic BMO norm: the largest mean oscillation over boxes of spatial
/// side `r` and time length `r²`, on the dyadic grid and its half shift.
pub fn parabolic_bmo_norm(f: &GridField) -> f64 {
    let g = f.grid;
    let mut boxes: Vec<(Vec<usize>, usize, u32)> = Vec::new();
    let mut m = 1u32;
    while (1usize << m) <= g.nx && (1usize << (2 * m)) <= g.nt {
        let side = 1usize << m;
        let len = 1usize << (2 * m);
        let mut starts_x: Vec<usize> = (0..=g.nx - side).step_by(side / 2).collect();
        starts_x.dedup();
        let starts_t: Vec<usize> = (0..=g.nt - len).step_by(len / 2).collect();
        let per = starts_x.len().pow((g.n - 1) as u32);
        for code in 0..per {
            let mut c = code;
            let corner: Vec<usize> = (0..g.n - 1)
                .map(|_| {
                    let v = starts_x[c % starts_x.len()];
                    c /= starts_x.len();
                    v
                })
                .collect();
            for &j0 in &starts_t {
                boxes.push((corner.clone(), j0, m));
            }
        }
        m += 1;
    }
    boxes
        .par_iter()
        .map(|(c, j0, m)| box_oscillation(f, c, *j0, *m))
        .reduce(|| 0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularParabolicData {
    pub b1: f64,
    #[serde(skip)]
    pub half_derivative: Option<GridField>,
    pub bmo_norm_b2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpgVerdict {
    pub data: RegularParabolicData,
    pub lip_constant_b: f64,
    pub b1_cap: f64,
    pub b2_cap: f64,
    pub pass: bool,
}

/// Measures `b₁` and `b₂ = ‖D^t_{1/2}ψ‖_*` and compares them with the caps.
pub fn gpg_check(graph: &Lip112Graph, b1_cap: f64, b2_cap: f64) -> Result<GpgVerdict> {
    let b1 = spatial_lipschitz(&graph.psi);
    let half = half_time_derivative(graph)?;
    let b2 = parabolic_bmo_norm(&half);
    Ok(GpgVerdict {
        pass: b1.is_finite() && b2.is_finite() && b1 <= b1_cap && b2 <= b2_cap,
        data: RegularParabolicData {
            b1,
            half_derivative: Some(half),
            bmo_norm_b2: b2,
        },
        lip_constant_b: graph.lip_constant_b,
        b1_cap,
        b2_cap,
    })
}

/// `C^∞` bump on `(0, 1)` with peak 1 at `1/2`.
pub fn bump(u: f64) -> f64 {
    let s = 2.0 * u - 1.0;
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// `ω(τ) = C min{(τ / log(1/τ))^{1/2}, 1}`, and `C` for `τ ≥ 1`.
pub fn lewis_silver_modulus(c: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else if tau >= 1.0 {
        c
    } else {
        c * (tau / (1.0 / tau).ln()).sqrt().min(1.0)
    }
}

/// Amplitude of the lacunary series relative to `C`.
const LS_AMPLITUDE: f64 = 1.0 / 40.0;

/// `g(t) = bump(t) Σ_j ε_j A 2^{−j/2} j^{−1/2} sin(2π 2^j t + θ_j)`, with the
/// frequencies the time grid resolves. Signs and phases are drawn in order of
/// `j`, so coarser grids see a prefix of the same series.
pub fn lewis_silver_profile(c: f64, nt: usize, dt: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = ((1.0 / dt).log2().floor() as i32 - 2).max(1);
    let terms: Vec<(f64, f64, f64)> = (1..=top)
        .map(|j| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = c * LS_AMPLITUDE * 2f64.powf(-0.5 * j as f64) / (j as f64).sqrt();
            (sign * amp, 2f64.powi(j), phase)
        })
        .collect();
    (0..nt)
        .map(|i| {
            let t = i as f64 * dt;
            let s: f64 = terms
                .iter()
                .map(|&(a, f, p)| a * (std::f64::consts::TAU * f * t + p).sin())
                .sum();
            bump(t) * s
        })
        .collect()
}

/// `max |g(t) − g(s)| / ω(|t − s|)` over every pair of nodes.
pub fn modulus_ratio(g: &[f64], dt: f64, c: f64) -> f64 {
    (1..g.len())
        .into_par_iter()
        .map(|m| {
            let w = lewis_silver_modulus(c, m as f64 * dt);
            (0..g.len() - m).map(|i| (g[i + m] - g[i]).abs()).fold(0.0, f64::max) / w
        })
        .reduce(|| 0.0, f64::max)
}

/// `ψ(x, t) = φ(x) g(t)` on the unit grid with `resolution` spatial nodes per
/// axis, `φ` a product of bumps and `g` from [`lewis_silver_profile`].
pub fn lewis_silver_graph(n: usize, c: f64, resolution: usize, seed: u64) -> Result<Lip112Graph> {
    if n < 2 {
        return Err(Error::invalid(format!("Lewis–Silver graphs need n ≥ 2, got {n}")));
    }
    if !(c > 0.0) {
        return Err(Error::invalid(format!("C = {c} must be positive")));
    }
    let grid = Grid::unit(n, resolution)?;
    let g = lewis_silver_profile(c, grid.nt, grid.dt(), seed);
    let ratio = modulus_ratio(&g, grid.dt(), c);
    if ratio > 1.0 {
        return Err(Error::Contract(format!("time profile exceeds its modulus by the factor {ratio}")));
    }
    let values = (0..grid.columns())
        .flat_map(|col| {
            let phi: f64 = grid.x(col).iter().map(|&x| bump(x)).product();
            g.iter().map(move |v| phi * v).collect::<Vec<_>>()
        })
        .collect();
    Lip112Graph::new(GridField::new(grid, values)?)
}

/// `min{(log 1/ℓ)^{−1/2}, 1/ℓ}`, read as `1/ℓ` once `ℓ ≥ 1`.
pub fn observation_profile(ell: f64) -> f64 {
    if ell >= 1.0 {
        1.0 / ell
    } else {
        (1.0 / (1.0 / ell).ln().sqrt()).min(1.0 / ell)
    }
}

/// `ℓ(Q) = 2^{−k}`.
pub fn side(tree: &DyadicTree, id: usize) -> f64 {
    2f64.powi(-tree.cube(id).k)
}

/// Cubes whose `κ`-ball stays inside the sampled box of a graph, so that the
/// edge of the sample does not count as a defect of the graph.
pub fn interior_cubes(tree: &DyadicTree, grid: &Grid, kappa: f64) -> Vec<usize> {
    let set = tree.set();
    let n = grid.n;
    let x_hi = (grid.nx - 1) as f64 * grid.dx;
    let t_hi = grid.t(grid.nt - 1);
    (0..tree.len())
        .filter(|&q| {
            let r = kappa * tree.diam(q);
            let c = set.point(tree.cube(q).center);
            r > 0.0
                && c[..n - 1].iter().all(|&x| x - r >= 0.0 && x + r <= x_hi)
                && c[n] - r * r >= 0.0
                && c[n] + r * r <= t_hi
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedCube {
    pub cube: usize,
    pub k: i32,
    pub side: f64,
    pub bbeta: f64,
    pub profile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsWindow {
    pub eps: f64,
    pub lo: f64,
    pub hi: f64,
    /// Cubes with `bβ > ε`.
    pub above: usize,
    /// Those among them outside `[lo, hi]`.
    pub outside: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationReport {
    pub cubes: Vec<ObservedCube>,
    /// Smallest `C_n` with `bβ(Q) ≤ C_n · profile(ℓ(Q))` on every cube.
    pub c_n: f64,
    pub windows: Vec<EpsWindow>,
    pub pass: bool,
}

/// Measures `C_n` in `bβ_𝒫(Q) ≤ C_n min{(log 1/ℓ)^{−1/2}, 1/ℓ}` over `cubes`,
/// then checks that each `{bβ > ε}` lies in `ℓ ∈ [e^{−(C_n/ε)²}, C_n/ε]`.
pub fn observation_check(tree: &DyadicTree, cubes: &[usize], eps: &[f64]) -> Result<ObservationReport> {
    let n = match tree.set().metric() {
        Metric::Parabolic { n } => n,
        m => return Err(Error::invalid(format!("observation check needs a parabolic cloud, got {}", m.name()))),
    };
    let fam = PlaneFamily::parabolic(n);
    let beta = Beta::new(tree, &fam)?;
    let cubes: Vec<ObservedCube> = cubes
        .par_iter()
        .map(|&q| {
            let v = beta.bilateral(q)?;
            let ell = side(tree, q);
            Ok(ObservedCube {
                cube: q,
                k: tree.cube(q).k,
                side: ell,
                bbeta: v.value,
                profile: observation_profile(ell),
            })
        })
        .collect::<Result<_>>()?;
    let c_n = cubes.iter().map(|c| c.bbeta / c.profile).fold(0.0, f64::max);
    let windows: Vec<EpsWindow> = eps
        .iter()
        .map(|&e| {
            let (lo, hi) = ((-(c_n / e).powi(2)).exp(), c_n / e);
            let above: Vec<&ObservedCube> = cubes.iter().filter(|c| c.bbeta > e).collect();
            EpsWindow {
                eps: e,
                lo,
                hi,
                above: above.len(),
                outside: above.iter().filter(|c| c.side < lo || c.side > hi).map(|c| c.cube).collect(),
            }
        })
        .collect();
    let pass = c_n.is_finite() && windows.iter().all(|w| w.outside.is_empty());
    Ok(ObservationReport { cubes, c_n, windows, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStepReport {
    pub big_k: f64,
    pub cubes: usize,
    /// Largest `bβ(Q)/β(KQ)` over cubes with `β(KQ) > 0`: the measured `c(b)`.
    pub c_b: f64,
    pub min_ratio: f64,
    pub witness: Option<usize>,
    /// Cubes with `β(KQ) = 0` but `bβ(Q) > 0`.
    pub unbounded: Vec<usize>,
    pub pass: bool,
}

/// `bβ_𝒫(Q) ≤ c(b) β_𝒫(KQ)` with `β(KQ) = inf_P diam(Q)^{−1} sup_{KQ} dist`,
/// measured over `cubes`. Passes when every ratio is finite and at most `cap`.
pub fn graph_step_check(tree: &DyadicTree, cubes: &[usize], big_k: f64, cap: f64) -> Result<GraphStepReport> {
    let n = match tree.set().metric() {
        Metric::Parabolic { n } => n,
        m => return Err(Error::invalid(format!("graph step needs a parabolic cloud, got {}", m.name()))),
    };
    let fam = PlaneFamily::parabolic(n);
    let near = Beta::new(tree, &fam)?;
    let wide = Beta::with_options(
        tree,
        &fam,
        BetaOptions {
            kappa: big_k,
            ..BetaOptions::default()
        },
    )?;
    let rows: Vec<(usize, f64, f64)> = cubes
        .par_iter()
        .map(|&q| Ok((q, near.bilateral(q)?.value, wide.sup(q)?.value)))
        .collect::<Result<_>>()?;
    let mut c_b: f64 = 0.0;
    let mut min_ratio = f64::INFINITY;
    let mut witness = None;
    let mut unbounded = Vec::new();
    for &(q, b, w) in &rows {
        if w > 0.0 {
            let r = b / w;
            if r > c_b {
                c_b = r;
                witness = Some(q);
            }
            min_ratio = min_ratio.min(r);
        } else if b > 0.0 {
            unbounded.push(q);
        }
    }
    Ok(GraphStepReport {
        big_k,
        cubes: rows.len(),
        c_b,
        min_ratio,
        witness,
        pass: unbounded.is_empty() && c_b <= cap,
        unbounded,
    })
}

/// Refinement sweep: the `GLem(𝒫, 2, 2)` Carleson constant of the
/// Lewis–Silver graph at each resolution, same seed throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub resolution: usize,
    pub levels: usize,
    pub cubes: usize,
    pub glem: f64,
    pub b2: f64,
}

pub fn lewis_silver_sweep(n: usize, c: f64, resolutions: &[usize], seed: u64) -> Result<Vec<SweepPoint>> {
    resolutions
        .iter()
        .map(|&res| {
            let graph = lewis_silver_graph(n, c, res, seed)?;
            let b2 = parabolic_bmo_norm(&half_time_derivative(&graph)?);
            let tree = build_tree(&graph.dilated(GRID_DILATION)?.cloud(CLOUD_REACH)?)?;
            let fam = PlaneFamily::parabolic(n);
            let values: Vec<f64> = Beta::new(&tree, &fam)?
                .table(BetaKind::Lq, 2.0)?
                .into_iter()
                .map(|v| v.value)
                .collect();
            let glem = glem_from_values(&tree, &values, 2.0, f64::INFINITY)?.worst_ratio;
            let mut ks: Vec<i32> = (0..tree.len()).map(|q| tree.cube(q).k).collect();
            ks.sort_unstable();
            ks.dedup();
            Ok(SweepPoint {
                resolution: res,
                levels: ks.len(),
                cubes: tree.len(),
                glem,
                b2,
            })
        })
        .collect()
}

/// `{(f(t), t) : t ∈ [t0, t1)}` in the parabolic plane (`n = 1`), nodes `dt`
/// apart with weight `dt`.
pub fn time_graph(f: impl Fn(f64) -> f64, t0: f64, t1: f64, dt: f64, scale_range: (f64, f64)) -> Result<WeightedSet> {
    let count = ((t1 - t0) / dt).round() as usize;
    let coords = (0..count)
        .flat_map(|j| {
            let t = t0 + j as f64 * dt;
            [f(t), t]
        })
        .collect();
    WeightedSet::new(Metric::Parabolic { n: 1 }, coords, vec![dt; count], 2.0, scale_range)
}

fn wave(t: f64) -> f64 {
    0.2 * (std::f64::consts::TAU * t).sin()
}

/// Time reach of the approximants beyond `[0, 1)` on each side.
const TIME_REACH: f64 = 4.0;

/// A smooth time graph over `[0, 1)` with time step `0.8 / nodes`,
/// approximated by the same graph over `[−4, 5)`. The step keeps `r_min`
/// clear below a power of two, so no dyadic level is lost to rounding.
pub fn graph_scene(nodes: usize) -> Result<Scene> {
    two_graphs_scene(nodes, None)
}

/// The graph of [`graph_scene`] and its translate by `sep` in the spatial
/// direction, approximated by the two long graphs.
pub fn two_graphs_scene(nodes: usize, sep: Option<f64>) -> Result<Scene> {
    let dt = 0.8 / nodes as f64;
    let offsets: Vec<f64> = std::iter::once(0.0).chain(sep).collect();
    let probe = time_graph(wave, 0.0, 1.0, dt, (1.0, 2.0))?;
    let r_min = 2.0 * probe.max_nn_distance();
    let parts = offsets
        .iter()
        .map(|&s| time_graph(move |t| wave(t) + s, 0.0, 1.0, dt, (r_min, 0.25)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&WeightedSet> = parts.iter().collect();
    let set = union(&refs, (r_min, 0.25))?;
    let catalog = offsets
        .iter()
        .map(|&s| time_graph(move |t| wave(t) + s, -TIME_REACH, 1.0 + TIME_REACH, dt, (r_min, TIME_REACH.sqrt() - 0.25)))
        .collect::<Result<_>>()?;
    Ok(Scene { set, catalog })
}

/// Upper scale of graph clouds on the unit box.
pub const CLOUD_REACH: f64 = 2.0;

/// Shrink applied before sampling a graph on a dyadic grid. Nearest
/// neighbours sit slightly more than `Δx = 2^{−m}` apart, which would put
/// `r_min` just above a power of two and cost the finest level.
pub const GRID_DILATION: f64 = 0.95;

/// Tree of the (shrunk) graph cloud and its cubes whose `2 diam Q`-ball
/// stays inside the sampled box.
pub fn observed_tree(graph: &Lip112Graph) -> Result<(DyadicTree, Vec<usize>)> {
    let shrunk = graph.dilated(GRID_DILATION)?;
    let tree = build_tree(&shrunk.cloud(CLOUD_REACH)?)?;
    let cubes = interior_cubes(&tree, &shrunk.grid(), 2.0);
    Ok((tree, cubes))
}

#[derive(Debug, Clone, Serialize)]
pub struct PurConfig {
    pub eta: f64,
    pub big_k: f64,
    pub pack_cap: f64,
    pub transfer: TransferConfig,
    pub engine: EngineConfig,
    /// `ε` values for the weak lemmas.
    pub eps: Vec<f64>,
    pub weak_bound: f64,
    pub regularity_cap: f64,
    pub max_centers: usize,
}

impl Default for PurConfig {
    fn default() -> Self {
        PurConfig {
            eta: 0.1,
            big_k: 2.0,
            pack_cap: 1e3,
            transfer: TransferConfig::default(),
            engine: EngineConfig::default(),
            eps: vec![0.1],
            weak_bound: f64::INFINITY,
            regularity_cap: 1e3,
            max_centers: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakVerdict {
    pub eps: f64,
    pub wglem: LemmaReport,
    pub bwglem: LemmaReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PurReport {
    pub config: PurConfig,
    pub regularity_constant: f64,
    pub cubes: usize,
    pub regimes: usize,
    pub bp2_pass: bool,
    pub bp2_theta: f64,
    pub transfer: TransferReport,
    pub weak: Vec<WeakVerdict>,
    pub pass: bool,
}

impl PurReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// From a parabolic cloud and a catalog of good graphs: regularity, cubes, a
/// coronization (given, or built greedily), the big-pieces certificate, the
/// transfer to `GLem(𝒫, 2, 2)` and the weak lemmas for every `ε`.
pub fn pur_pipeline(
    set: &WeightedSet,
    catalog: &ApproximantCatalog,
    corona: Option<&CoronaDecomposition>,
    cfg: &PurConfig,
) -> Result<PurReport> {
    let n = match set.metric() {
        Metric::Parabolic { n } => n,
        m => return Err(Error::invalid(format!("parabolic pipeline on a {} cloud", m.name())).in_stage("input")),
    };
    let reg = regularity_check_with(
        set,
        &RegularityOptions {
            max_centers: Some(cfg.max_centers),
            ..Default::default()
        },
    )
    .map_err(|e| e.in_stage("regularity"))?;
    if reg.constant_c > cfg.regularity_cap {
        return Err(Error::NotRegular(format!("constant {} exceeds {}", reg.constant_c, cfg.regularity_cap)).in_stage("regularity"));
    }
    let tree = build_tree(set).map_err(|e| e.in_stage("cubes"))?;
    let built;
    let corona = match corona {
        Some(c) => c,
        None => {
            built = build_corona(&tree, catalog, cfg.eta, cfg.big_k, cfg.pack_cap).map_err(|e| e.in_stage("corona"))?;
            &built
        }
    };
    let cert = corona_to_bp2(&tree, corona, catalog, &cfg.engine).map_err(|e| e.in_stage("bp2"))?;
    let fam = PlaneFamily::parabolic(n);
    let tcfg = TransferConfig {
        p: 2.0,
        q: 2.0,
        ..cfg.transfer
    };
    let transfer = transfer_check(&tree, catalog, &fam, &tcfg).map_err(|e| e.in_stage("transfer"))?;
    let weak = cfg
        .eps
        .iter()
        .map(|&eps| {
            Ok(WeakVerdict {
                eps,
                wglem: wglem_check(&tree, &fam, eps, cfg.weak_bound)?,
                bwglem: bwglem_check(&tree, &fam, eps, cfg.weak_bound)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("weak lemmas"))?;
    let pass = cert.pass && transfer.pass && weak.iter().all(|w| w.wglem.pass && w.bwglem.pass);
    Ok(PurReport {
        config: cfg.clone(),
        regularity_constant: reg.constant_c,
        cubes: tree.len(),
        regimes: corona.regimes.len(),
        bp2_pass: cert.pass,
        bp2_theta: cert.theta_prime,
        transfer,
        weak,
        pass,
    })
}

#[cfg(test)]
mod tests;
