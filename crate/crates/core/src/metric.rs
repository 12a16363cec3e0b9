//! Euclidean and parabolic distances on coordinate tuples.
//!
//! Parabolic points live in `R^{n+1}` as `(X, t)` with the time coordinate
//! stored last; the distance is `|X - Y| + |t - s|^{1/2}`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "lowercase")]
pub enum Metric {
    Euclidean { n: usize },
    Parabolic { n: usize },
}

impl Metric {
    /// Number of stored coordinates per point.
    pub fn dim(&self) -> usize {
        match *self {
            Metric::Euclidean { n } => n,
            Metric::Parabolic { n } => n + 1,
        }
    }

    /// Number of spatial coordinates (all of them for Euclidean).
    pub fn spatial_dim(&self) -> usize {
        match *self {
            Metric::Euclidean { n } | Metric::Parabolic { n } => n,
        }
    }

    pub fn is_parabolic(&self) -> bool {
        matches!(self, Metric::Parabolic { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Euclidean { .. } => "euclidean",
            Metric::Parabolic { .. } => "parabolic",
        }
    }

    #[inline]
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Metric::Euclidean { n } => {
                let mut s = 0.0;
                for i in 0..n {
                    let d = a[i] - b[i];
                    s += d * d;
                }
                s.sqrt()
            }
            Metric::Parabolic { n } => {
                let mut s = 0.0;
                for i in 0..n {
                    let d = a[i] - b[i];
                    s += d * d;
                }
                s.sqrt() + (a[n] - b[n]).abs().sqrt()
            }
        }
    }

    /// Distance assembled from per-axis gaps (each gap nonnegative).
    #[inline]
    fn from_gaps(&self, gaps: impl Iterator<Item = f64>) -> f64 {
        match *self {
            Metric::Euclidean { .. } => gaps.map(|g| g * g).sum::<f64>().sqrt(),
            Metric::Parabolic { n } => {
                let mut s = 0.0;
                let mut t = 0.0;
                for (i, g) in gaps.enumerate() {
                    if i < n {
                        s += g * g;
                    } else {
                        t = g;
                    }
                }
                s.sqrt() + t.sqrt()
            }
        }
    }

    /// Lower bound on the distance from `p` to any point of the box `[lo, hi]`.
    #[inline]
    pub fn box_lower_bound(&self, p: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        self.from_gaps((0..self.dim()).map(|i| {
            if p[i] < lo[i] {
                lo[i] - p[i]
            } else if p[i] > hi[i] {
                p[i] - hi[i]
            } else {
                0.0
            }
        }))
    }

    /// Upper bound on the distance from `p` to any point of the box `[lo, hi]`.
    #[inline]
    pub fn box_upper_bound(&self, p: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        self.from_gaps((0..self.dim()).map(|i| (p[i] - lo[i]).abs().max((hi[i] - p[i]).abs())))
    }

    /// Per-axis half extent of the smallest box containing every ball of radius `r`.
    pub fn box_half_extent(&self, r: f64) -> Vec<f64> {
        match *self {
            Metric::Euclidean { n } => vec![r; n],
            Metric::Parabolic { n } => {
                let mut v = vec![r; n + 1];
                v[n] = r * r;
                v
            }
        }
    }

    /// Applies the intrinsic dilation by `rho` (parabolic: `(X, t) -> (rho X, rho^2 t)`).
    pub fn dilate_point(&self, p: &mut [f64], rho: f64) {
        match *self {
            Metric::Euclidean { n } => p[..n].iter_mut().for_each(|c| *c *= rho),
            Metric::Parabolic { n } => {
                p[..n].iter_mut().for_each(|c| *c *= rho);
                p[n] *= rho * rho;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for metric in [
            Metric::Euclidean { n: 2 },
            Metric::Euclidean { n: 3 },
            Metric::Parabolic { n: 1 },
            Metric::Parabolic { n: 2 },
        ] {
            for _ in 0..10_000 {
                let a = random_point(&mut rng, metric.dim());
                let b = random_point(&mut rng, metric.dim());
                let c = random_point(&mut rng, metric.dim());
                let ab = metric.distance(&a, &b);
                assert_eq!(ab, metric.distance(&b, &a));
                assert!(ab <= metric.distance(&a, &c) + metric.distance(&c, &b) + 1e-12);
                assert_eq!(metric.distance(&a, &a), 0.0);
            }
        }
    }

    #[test]
    fn parabolic_scaling_is_homogeneous() {
        let m = Metric::Parabolic { n: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let mut a = random_point(&mut rng, 3);
            let mut b = random_point(&mut rng, 3);
            let rho = rng.gen_range(0.1..10.0);
            let d = m.distance(&a, &b);
            m.dilate_point(&mut a, rho);
            m.dilate_point(&mut b, rho);
            assert!((m.distance(&a, &b) - rho * d).abs() <= 1e-9 * (1.0 + rho * d));
        }
    }

    #[test]
    fn parabolic_distance_value() {
        let m = Metric::Parabolic { n: 1 };
        assert_eq!(m.distance(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn box_bound_never_exceeds_true_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for metric in [Metric::Euclidean { n: 3 }, Metric::Parabolic { n: 2 }] {
            for _ in 0..2000 {
                let p = random_point(&mut rng, metric.dim());
                let q = random_point(&mut rng, metric.dim());
                let lo: Vec<f64> = q.iter().map(|c| c - 0.5).collect();
                let hi: Vec<f64> = q.iter().map(|c| c + 0.5).collect();
                assert!(metric.box_lower_bound(&p, &lo, &hi) <= metric.distance(&p, &q) + 1e-12);
                assert!(metric.box_upper_bound(&p, &lo, &hi) >= metric.distance(&p, &q) - 1e-12);
            }
        }
    }
}
