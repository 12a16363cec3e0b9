use gmt_core::beta::{Beta, BetaKind, PlaneFamily};
use gmt_core::corona::ApproximantCatalog;
use gmt_core::dyadic::build_tree;
use gmt_core::fixtures::Scene;
use gmt_core::parabolic::{
    bump, gpg_check, graph_scene, graph_step_check, observed_tree, lewis_silver_graph, lewis_silver_sweep,
    pur_pipeline, two_graphs_scene, Grid, Lip112Graph, PurConfig, PurReport, CLOUD_REACH,
};
use gmt_core::space::{regularity_check_with, RegularityOptions};
use gmt_core::Error;

fn sampled() -> RegularityOptions {
    RegularityOptions {
        max_centers: Some(256),
        ..Default::default()
    }
}

fn pipeline(scene: Scene) -> PurReport {
    let catalog = ApproximantCatalog::with_options(scene.catalog, &sampled()).unwrap();
    let r = pur_pipeline(&scene.set, &catalog, None, &PurConfig::default()).unwrap();
    eprintln!(
        "C = {}, {} cubes, {} regimes, θ′ = {}, C_b = {}, GLem {}",
        r.regularity_constant, r.cubes, r.regimes, r.bp2_theta, r.transfer.constant_b, r.transfer.glem.worst_ratio
    );
    r
}

fn bump_graph(nx: usize) -> Lip112Graph {
    Lip112Graph::from_fn(Grid::unit(2, nx).unwrap(), |x, t| 0.3 * bump(x[0]) * bump(t)).unwrap()
}

#[test]
fn smooth_time_graph_runs_the_whole_pipeline() {
    let r = pipeline(graph_scene(4096).unwrap());
    assert!(r.pass && r.bp2_pass);
    assert!(r.bp2_theta > 0.0);
    assert!(r.transfer.glem.worst_ratio.is_finite());
    assert!(r.weak.iter().all(|w| w.wglem.pass && w.bwglem.pass));
}

#[test]
fn two_separated_graphs_have_big_pieces() {
    let r = pipeline(two_graphs_scene(4096, Some(0.3)).unwrap());
    assert!(r.bp2_pass && r.bp2_theta > 0.0);
    assert!(r.regimes >= 2);
    assert!(r.transfer.glem.worst_ratio.is_finite());
}

#[test]
fn pipeline_rejects_euclidean_clouds() {
    let scene = gmt_core::fixtures::line_scene(1.0 / 256.0).unwrap();
    let catalog = ApproximantCatalog::new(scene.catalog).unwrap();
    let err = pur_pipeline(&scene.set, &catalog, None, &PurConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }), "{err:?}");
    assert!(err.to_string().contains("input"));
}

#[test]
fn smooth_graph_is_a_good_parabolic_graph() {
    let v = gpg_check(&bump_graph(32), 10.0, 10.0).unwrap();
    assert!(v.pass, "{v:?}");
    assert!(v.data.b1 > 0.0 && v.data.bmo_norm_b2 > 0.0);
}

#[test]
fn graph_regularity_is_stable_under_refinement() {
    let c: Vec<f64> = [16, 32]
        .iter()
        .map(|&nx| {
            let set = bump_graph(nx).cloud(CLOUD_REACH).unwrap();
            regularity_check_with(&set, &sampled()).unwrap().constant_c
        })
        .collect();
    eprintln!("regularity constants {c:?}");
    assert!(c[1] <= 1.5 * c[0] && c[0] <= 1.5 * c[1]);
}

#[test]
fn bilateral_numbers_are_controlled_by_wider_numbers_on_graphs() {
    let g = lewis_silver_graph(2, 1.0, 64, 3).unwrap();
    let (tree, cubes) = observed_tree(&g).unwrap();
    assert!(!cubes.is_empty());
    let r = graph_step_check(&tree, &cubes, 4.0, 100.0).unwrap();
    eprintln!("c(b) = {}, min ratio {}, {} cubes, {:?}", r.c_b, r.min_ratio, r.cubes, r.unbounded);
    assert!(r.pass && r.unbounded.is_empty());
    assert!(r.c_b.is_finite() && r.c_b > 0.0);
}

#[test]
fn parabolic_dilation_keeps_the_numbers() {
    let set = lewis_silver_graph(2, 1.0, 16, 5).unwrap().cloud(CLOUD_REACH).unwrap();
    let fam = PlaneFamily::parabolic(2);
    let tree = build_tree(&set).unwrap();
    let big = build_tree(&set.dilated(2.0).unwrap()).unwrap();
    assert_eq!(tree.len(), big.len());
    for kind in [BetaKind::Lq, BetaKind::Bilateral] {
        let a = Beta::new(&tree, &fam).unwrap().table(kind, 2.0).unwrap();
        let b = Beta::new(&big, &fam).unwrap().table(kind, 2.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(tree.cube(x.cube).members, big.cube(y.cube).members);
            assert!((x.value - y.value).abs() <= 1e-6 * (1.0 + x.value), "{kind:?}: {} vs {}", x.value, y.value);
        }
    }
}

#[test]
fn lewis_silver_half_derivative_oscillation_grows() {
    let sweep = lewis_silver_sweep(2, 1.0, &[8, 16, 32], 11).unwrap();
    eprintln!("{sweep:?}");
    for w in sweep.windows(2) {
        assert!(w[1].b2 > w[0].b2);
        assert!(w[1].glem > w[0].glem);
    }
}
