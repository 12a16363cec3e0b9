use super::*;
use crate::dyadic::build_tree;
use crate::fixtures::{plane, two_planes};

fn line_tree(h: f64) -> DyadicTree {
    build_tree(&plane(2, 1, 1.0, h).unwrap()).unwrap()
}

/// Cubes whose bilateral ball stays inside the sampled segment.
fn interior(tree: &DyadicTree, lo: f64, hi: f64) -> Vec<usize> {
    (0..tree.len())
        .filter(|&q| {
            let x = tree.center_point(q)[0];
            let r = 2.0 * tree.diam(q);
            x - r >= lo && x + r <= hi && tree.diam(q) > 0.0
        })
        .collect()
}

#[test]
fn member_plane_gives_zero() {
    let tree = line_tree(1.0 / 256.0);
    let fam = PlaneFamily::affine(2, 1);
    let b = Beta::new(&tree, &fam).unwrap();
    for q in 0..tree.len() {
        assert!(b.lq(q, 2.0).unwrap().value < 1e-9);
        assert!(b.lq(q, 1.0).unwrap().value < 1e-9);
        assert!(b.sup(q).unwrap().value < 1e-9);
    }
    let inner = interior(&tree, 0.0, 1.0 - 1.0 / 256.0);
    assert!(!inner.is_empty());
    for q in inner {
        // only the grid sampling gap between lattice points remains
        assert!(b.bilateral(q).unwrap().value * tree.diam(q) <= 0.5 / 256.0 + 1e-12);
    }
}

#[test]
fn balanced_parallel_lines_fit_the_midline() {
    let s = 0.125;
    let set = two_planes(2, 1, 1.0, 1.0 / 128.0, s).unwrap();
    let tree = build_tree(&set).unwrap();
    let fam = PlaneFamily::affine(2, 1);
    let root = tree.roots()[0];
    let v = beta_q(&tree, root, &fam, 2.0).unwrap();
    let diam = tree.diam(root);
    let expect = 0.5 * s / diam;
    assert!((v.normalized() - expect).abs() <= 1e-9, "{} vs {expect}", v.normalized());
    match v.minimizer {
        Minimizer::Plane(p) => {
            assert!((p.origin[1] - 0.5 * s).abs() < 1e-9);
            assert!(p.normals[0][0].abs() < 1e-9);
        }
        _ => panic!("plane expected"),
    }
    // brute force over angle and offset
    let pts: Vec<usize> = dilate(&tree, root, 2.0).unwrap();
    let mut best = f64::INFINITY;
    for a in 0..=180 {
        let th = (a as f64 - 90.0).to_radians() * 0.25;
        let (c, sn) = (th.cos(), th.sin());
        for o in 0..=200 {
            let off = -0.5 + 1.5 * o as f64 / 200.0;
            let sum: f64 = pts
                .iter()
                .map(|&i| {
                    let y = set.point(i);
                    let d = -sn * y[0] + c * y[1] - off;
                    set.weight(i) * d * d
                })
                .sum();
            best = best.min((sum / tree.mass(root)).sqrt() / diam);
        }
    }
    assert!(v.value <= best * (1.0 + 1e-9));
    assert!(v.value >= best * 0.98);
}

#[test]
fn power_means_increase_with_q() {
    let set = crate::fixtures::lipschitz_graph(0.5, 0.125, 1.0, 1.0 / 128.0).unwrap();
    let tree = build_tree(&set).unwrap();
    let fam = PlaneFamily::affine(2, 1);
    let b = Beta::new(&tree, &fam).unwrap();
    for q in 0..tree.len() {
        let b1 = b.lq(q, 1.0).unwrap();
        let b2 = b.lq(q, 2.0).unwrap();
        let sup = b.sup(q).unwrap().value;
        let bil = b.bilateral(q).unwrap().value;
        assert!(b1.heuristic && !b2.heuristic);
        assert!(b1.normalized() <= b2.normalized() * (1.0 + 1e-9) + 1e-12, "cube {q}");
        assert!(b2.normalized() <= sup * (1.0 + 1e-9) + 1e-12, "cube {q}");
        assert!(sup <= bil + 1e-12, "cube {q}");
    }
}

#[test]
fn planes_through_the_centre_cost_a_bounded_factor() {
    let set = crate::fixtures::lipschitz_graph(0.5, 0.125, 1.0, 1.0 / 128.0).unwrap();
    let tree = build_tree(&set).unwrap();
    let fam = PlaneFamily::affine(2, 1);
    let b = Beta::new(&tree, &fam).unwrap();
    let mut worst: f64 = 0.0;
    for q in 0..tree.len() {
        let full = b.sup(q).unwrap().value;
        let through = b.centered(q).unwrap().value;
        assert!(full <= through + 1e-12);
        if full > 1e-9 {
            worst = worst.max(through / full);
        }
    }
    assert!(worst >= 1.0 && worst <= 3.0, "{worst}");
}

#[test]
fn proximity_numbers() {
    let h = 1.0 / 128.0;
    let e = plane(2, 1, 1.0, h).unwrap();
    let tree = build_tree(&e).unwrap();
    for q in 0..tree.len() {
        assert_eq!(i_numbers(&tree, &e, q, 2.0).unwrap(), 0.0);
        assert_eq!(i_numbers(&tree, &e, q, f64::INFINITY).unwrap(), 0.0);
    }
    let gap = 0.01;
    let shifted: Vec<f64> = e.coords().chunks(2).flat_map(|p| [p[0], p[1] + gap]).collect();
    let e3 = WeightedSet::new(e.metric(), shifted, e.weights().to_vec(), 1.0, e.scale_range()).unwrap();
    for q in 0..tree.len() {
        let diam = tree.diam(q);
        let v = i_numbers(&tree, &e3, q, f64::INFINITY).unwrap();
        let expect = if gap < 2.0 * diam { gap / diam } else { 0.0 };
        assert!((v - expect).abs() <= 1e-12 * (1.0 + expect), "cube {q}: {v} vs {expect}");
    }
}

#[test]
fn companion_of_the_set_itself() {
    let tree = line_tree(1.0 / 512.0);
    let c2 = 64.0;
    for q in 0..tree.len() {
        let k = tree.cube(q).k;
        match companion_cube(&tree, &tree, q, c2) {
            Ok(c) => {
                let r = tree.diam(c) / tree.diam(q);
                assert!((10.0..=c2).contains(&r));
                assert!(tree.cube(c).k <= k - 3);
                let close = tree.cube(c).members.iter().any(|&z| {
                    tree.cube(q).members.iter().any(|&y| tree.set().distance(y, z) <= delta_match(tree.set()))
                });
                assert!(close);
            }
            Err(e) => {
                assert!(matches!(e, Error::Contract(_)));
                assert!(k < tree.k_min() + 5, "level {k} should have a companion");
            }
        }
    }
    let root = tree.roots()[0];
    assert!(companion_cube(&tree, &tree, root, c2).is_err());
}

#[test]
fn gate_diagnostic() {
    assert!(pq_gate(2.0, 2.0, 1.0).is_ok());
    let err = pq_gate(1.0, f64::INFINITY, 1.0).unwrap_err().to_string();
    assert!(err.contains("1/q - 1/p + 1/d > 0"), "{err}");
    assert!(pq_gate(4.0, 1.0, 1.0).is_ok());
    assert!(pq_gate(3.0, 1.0, 0.5).is_ok());
    assert!(pq_gate(3.0, 1.0, 0.5).unwrap() > 0.0);
    assert!(pq_gate(3.0, 3.0, 0.25).is_ok());
    assert!(pq_gate(5.0, f64::INFINITY, 4.0).is_ok());
    assert!(pq_gate(4.0, f64::INFINITY, 4.0).is_err());
}

#[test]
fn weak_lemmas_are_vacuous_past_two() {
    let set = crate::fixtures::lipschitz_graph(1.0, 0.0625, 1.0, 1.0 / 128.0).unwrap();
    let tree = build_tree(&set).unwrap();
    let fam = PlaneFamily::affine(2, 1);
    let r = wglem_check(&tree, &fam, 2.0 + 1e-9, 0.0).unwrap();
    assert!(r.pass && r.worst_ratio == 0.0);
    let own = PlaneFamily::ExplicitSets(vec![set.clone()]);
    let r = bwglem_check(&tree, &own, 2.0 + 1e-9, 0.0).unwrap();
    assert!(r.pass);
    let v = bbeta(&tree, tree.roots()[0], &own).unwrap();
    assert_eq!(v.value, 0.0);
}

#[test]
fn disjoint_member_pays_the_whole_first_term() {
    let tree = line_tree(1.0 / 128.0);
    let far: Vec<f64> = tree.set().coords().chunks(2).flat_map(|p| [p[0], p[1] + 50.0]).collect();
    let far = WeightedSet::new(tree.set().metric(), far, tree.set().weights().to_vec(), 1.0, tree.set().scale_range()).unwrap();
    let fam = PlaneFamily::ExplicitSets(vec![far]);
    for q in 0..tree.len() {
        if tree.diam(q) == 0.0 {
            continue;
        }
        let v = bbeta(&tree, q, &fam).unwrap();
        let first = beta_inf(&tree, q, &fam).unwrap().value;
        assert!(first >= 1.0 - 1e-9);
        assert!((v.value - first).abs() <= 1e-12 * first);
    }
}

#[test]
fn csv_rows() {
    let tree = line_tree(1.0 / 64.0);
    let fam = PlaneFamily::affine(2, 1);
    let vals = Beta::new(&tree, &fam).unwrap().table(BetaKind::Sup, f64::INFINITY).unwrap();
    let mut buf = Vec::new();
    write_beta_csv(&tree, &vals, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("cube_id,k,q,beta,param0"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[2], "inf");
    assert_eq!(text.lines().count(), tree.len() + 1);
}

#[test]
fn parabolic_planes_ignore_time() {
    // X = (x1, x2), t; the cloud lies on {x2 = 0.3} with wild times
    let mut coords = Vec::new();
    for i in 0..32 {
        for j in 0..64 {
            coords.extend([i as f64 / 32.0, 0.3, (j as f64 / 64.0).powi(2)]);
        }
    }
    let n = coords.len() / 3;
    let set = WeightedSet::assemble(Metric::Parabolic { n: 2 }, coords, vec![1.0; n], 3.0, (0.1, 0.5)).unwrap();
    let tree = build_tree(&set).unwrap();
    let fam = PlaneFamily::parabolic(2);
    for q in 0..tree.len() {
        assert!(beta_q(&tree, q, &fam, 2.0).unwrap().value < 1e-9);
        let v = beta_inf(&tree, q, &fam).unwrap();
        assert!(v.value < 1e-9);
        if let Minimizer::Plane(p) = v.minimizer {
            assert_eq!(p.normals[0].len(), 2);
        }
    }
    assert!(Beta::new(&tree, &PlaneFamily::affine(3, 2)).is_err());
}
