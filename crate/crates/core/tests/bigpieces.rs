use std::time::Instant;

use gmt_core::bigpieces::{corona_to_bp2, BP2Certificate, CaseKind, EngineConfig};
use gmt_core::corona::{build_corona, trivial_corona, validate_corona, ApproximantCatalog};
use gmt_core::dyadic::build_tree;
use gmt_core::space::RegularityOptions;
use gmt_core::fixtures::{line_scene, staircase_scene, teeth_scene, two_lines_scene, Scene};

const H: f64 = 1.0 / 1024.0;

fn run(scene: Scene, trivial: bool) -> BP2Certificate {
    let t = Instant::now();
    let tree = build_tree(&scene.set).unwrap();
    assert_eq!(tree.k_max() - tree.k_min() + 1, 6);
    let opts = RegularityOptions {
        max_centers: Some(512),
        ..Default::default()
    };
    let catalog = ApproximantCatalog::with_options(scene.catalog, &opts).unwrap();
    eprintln!("catalog ready {:?}", t.elapsed());
    let corona = if trivial {
        trivial_corona(&tree, 0, 0.5, 2.0)
    } else {
        build_corona(&tree, &catalog, 0.5, 2.0, 64.0).unwrap()
    };
    assert!(validate_corona(&corona, &tree, &catalog, false).unwrap().pass);
    eprintln!("corona ready {:?}", t.elapsed());
    let cert = corona_to_bp2(&tree, &corona, &catalog, &EngineConfig::default()).unwrap();
    eprintln!(
        "{} cubes, {} regimes, {} bad, {} rungs, θ′ = {}, {:?}",
        tree.len(),
        corona.regimes.len(),
        corona.bad.len(),
        cert.rungs.len(),
        cert.theta_prime,
        t.elapsed()
    );
    let mut kinds = std::collections::BTreeMap::new();
    for c in &cert.cubes {
        *kinds.entry(format!("{:?}", c.h.case)).or_insert(0) += 1;
    }
    eprintln!("cases {kinds:?}");
    for v in cert.violations.iter().take(10) {
        eprintln!("{v:?}");
    }
    cert
}

fn monotone(cert: &BP2Certificate) {
    for w in cert.rungs.windows(2) {
        assert!(w[1].c_prime_a <= w[0].c_prime_a);
        assert!(w[1].c_a <= w[0].c_a);
        assert!(w[1].theta_a <= w[0].theta_a);
        assert!(w[1].big_c_a >= w[0].big_c_a);
    }
    let last = cert.rungs.last().unwrap();
    assert!(last.c_prime_a > 0.0 && last.theta_a > 0.0 && last.big_c_a.is_finite());
    assert_eq!(cert.rungs.len(), (cert.state.c_eta_k / cert.state.b).ceil() as usize + 1);
}

#[test]
fn set_in_catalog_covers_every_cube() {
    let cert = run(line_scene(H).unwrap(), true);
    assert!(cert.pass, "{:?}", cert.violations);
    for c in &cert.cubes {
        assert!((c.h.c_prime - 1.0).abs() < 1e-12, "cube {}", c.id);
        assert!((c.h_star.c_prime - 1.0).abs() < 1e-12, "cube {}", c.id);
    }
    monotone(&cert);
    assert!(cert.to_json().unwrap().contains("\"nodes\""));
}

#[test]
fn two_lines_certificate() {
    let cert = run(two_lines_scene(H, 0.2).unwrap(), false);
    assert!(cert.pass, "{:?}", cert.violations);
    monotone(&cert);
    for c in &cert.cubes {
        for rec in [&c.h, &c.h_star] {
            if let Some(b) = rec.c_prime_bound {
                assert!(rec.c_prime >= b * (1.0 - 1e-6));
            }
            assert!(rec.t1_max <= 1);
        }
    }
}

#[test]
fn staircase_certificate() {
    let cert = run(staircase_scene(1.0 / 1200.0, 0.25, 0.125).unwrap(), false);
    assert!(cert.pass, "{:?}", cert.violations);
    monotone(&cert);
    assert!(cert.cubes.iter().all(|c| c.h.theta > 0.0 && c.h_star.theta > 0.0));
    assert!(cert.cubes.iter().any(|c| c.h.case != CaseKind::Base));
}

#[test]
fn teeth_reach_every_case() {
    let cert = run(teeth_scene(1.0 / 1200.0, 0.5, 1.0 / 32.0).unwrap(), false);
    assert!(cert.pass, "{:?}", cert.violations);
    monotone(&cert);
    for kind in [CaseKind::One, CaseKind::TwoB] {
        assert!(cert.cubes.iter().any(|c| c.h.case == kind), "{kind:?} never taken");
    }
}
