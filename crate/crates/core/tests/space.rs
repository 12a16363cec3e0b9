use gmt_core::fixtures::{lipschitz_graph, plane, rigid_motion};
use gmt_core::parabolic::{bump, Grid, Lip112Graph, CLOUD_REACH};
use gmt_core::space::{localize_indices, regularity_check, regularity_check_with, RegularityOptions};
use gmt_core::WeightedSet;
use proptest::prelude::*;

fn permuted(set: &WeightedSet, shift: usize) -> WeightedSet {
    let n = set.len();
    let order: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
    let coords = order.iter().flat_map(|&i| set.point(i).to_vec()).collect();
    let weights = order.iter().map(|&i| set.weight(i)).collect();
    WeightedSet::assemble(set.metric(), coords, weights, set.dim_d(), set.scale_range()).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn regularity_ignores_rigid_motions(lambda in 0.1f64..1.0, angle in 0.0f64..6.28, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let set = lipschitz_graph(lambda, 0.125, 1.0, 1.0 / 128.0).unwrap();
        let (c, s) = (angle.cos(), angle.sin());
        let moved = rigid_motion(&set, &[c, -s, s, c], &[dx, dy]).unwrap();
        let a = regularity_check(&set).unwrap();
        let b = regularity_check(&moved).unwrap();
        prop_assert!(close(a.constant_c, b.constant_c), "{} vs {}", a.constant_c, b.constant_c);
    }

    #[test]
    fn regularity_ignores_point_order(lambda in 0.1f64..1.0, shift in 0usize..128) {
        let set = lipschitz_graph(lambda, 0.125, 1.0, 1.0 / 128.0).unwrap();
        let a = regularity_check(&set).unwrap();
        let b = regularity_check(&permuted(&set, shift)).unwrap();
        prop_assert!(close(a.constant_c, b.constant_c));
    }

    #[test]
    fn localization_sits_between_two_balls(x in 0usize..1024, t in 0.0f64..1.0) {
        let set = plane(2, 2, 1.0, 1.0 / 32.0).unwrap();
        let (lo, hi) = set.scale_range();
        let r = lo * (hi / lo).powf(t);
        let inside = localize_indices(&set, x, r).unwrap();
        let p = set.point(x).to_vec();
        for i in 0..set.len() {
            let d = set.metric().distance(&p, set.point(i));
            let member = inside.binary_search(&i).is_ok();
            if d <= r {
                prop_assert!(member, "point {i} at {d} missing for r = {r}");
            }
            if member {
                prop_assert!(d <= 3.0 * r);
            }
        }
    }
}

#[test]
fn parabolic_regularity_ignores_spatial_rotation() {
    let g = Lip112Graph::from_fn(Grid::unit(2, 16).unwrap(), |x, t| 0.3 * bump(x[0]) * bump(t)).unwrap();
    let set = g.cloud(CLOUD_REACH).unwrap();
    let opts = RegularityOptions {
        max_centers: Some(256),
        ..Default::default()
    };
    let a = regularity_check_with(&set, &opts).unwrap();
    let (c, s) = (0.6, 0.8);
    let rot = [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0];
    let moved = rigid_motion(&set, &rot, &[0.5, -2.0, 3.0]).unwrap();
    let b = regularity_check_with(&moved, &opts).unwrap();
    assert!(close(a.constant_c, b.constant_c), "{} vs {}", a.constant_c, b.constant_c);
}
