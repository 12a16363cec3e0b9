use super::*;

fn bump_graph(n: usize, nx: usize) -> Lip112Graph {
    let grid = Grid::unit(n, nx).unwrap();
    Lip112Graph::from_fn(grid, |x, t| 0.3 * x.iter().map(|&v| bump(v)).product::<f64>() * bump(t)).unwrap()
}

#[test]
fn constant_in_time_has_no_half_derivative() {
    let grid = Grid::new(2, 4, 64, 1.0 / 8.0).unwrap();
    let zero = GridField::new(grid, vec![0.0; grid.len()]).unwrap();
    let d = half_time_derivative_of(&zero).unwrap();
    assert!(d.values.iter().all(|&v| v == 0.0));
    let one = GridField::new(grid, vec![1.0; grid.len()]).unwrap();
    assert!(matches!(half_time_derivative_of(&one), Err(Error::InvalidInput(_))));
}

#[test]
fn half_derivative_matches_the_oracle() {
    let g = bump_graph(2, 32);
    let d = half_time_derivative(&g).unwrap();
    let grid = g.grid();
    let c = grid.columns() / 2;
    let amp = 0.3 * grid.x(c).iter().map(|&v| bump(v)).product::<f64>();
    let scale = (0..grid.nt).map(|j| d.at(c, j).abs()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for j in (0..grid.nt).step_by(7) {
        let t = grid.t(j);
        let want = amp * half_derivative_oracle(bump, t, 0.0, 1.0, 4000);
        worst = worst.max((d.at(c, j) - want).abs() / scale);
    }
    assert!(worst <= 1e-3, "relative error {worst}");
}

#[test]
fn half_derivative_constant_is_the_multiplier() {
    // ∫₀^∞ (1 − cos v) v^{−3/2} dv = √(2π), so ĉ · (−2√(2π)) = 1
    assert!((C_HAT * -2.0 * (2.0 * std::f64::consts::PI).sqrt() - 1.0).abs() < 1e-15);
    // a slowly windowed wave: D cos(ωt) ≈ √ω cos(ωt) away from the window edges
    let w = 2.0 * std::f64::consts::PI * 8.0;
    let f = |t: f64| (w * t).cos() * (-(t / 3.0).powi(8)).exp();
    let got = half_derivative_oracle(f, 0.0, -12.0, 12.0, 40_000);
    assert!((got - w.sqrt()).abs() <= 2e-2 * w.sqrt(), "{got} vs {}", w.sqrt());
}

#[test]
fn half_derivative_is_linear_and_homogeneous() {
    let grid = Grid::unit(2, 16).unwrap();
    let a = grid.sample(|x, t| bump(x[0]) * bump(t));
    let b = grid.sample(|x, t| x[0] * bump(t).powi(2));
    let da = half_time_derivative_of(&GridField::new(grid, a.clone()).unwrap()).unwrap();
    let db = half_time_derivative_of(&GridField::new(grid, b.clone()).unwrap()).unwrap();
    let mix: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 2.5 * u + v).collect();
    let dm = half_time_derivative_of(&GridField::new(grid, mix).unwrap()).unwrap();
    for i in 0..grid.len() {
        let want = 2.5 * da.values[i] + db.values[i];
        assert!((dm.values[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }
    // ψ_ρ(x,t) = ψ(ρx, ρ²t) on the grid dilated by 1/ρ has the same node values
    let rho = 4.0;
    let small = GridField::new(grid.dilated(1.0 / rho), a).unwrap();
    let ds = half_time_derivative_of(&small).unwrap();
    for i in 0..grid.len() {
        assert!((ds.values[i] - rho * da.values[i]).abs() <= 1e-9 * (1.0 + da.values[i].abs()));
    }
}

#[test]
fn bmo_of_simple_fields() {
    let grid = Grid::unit(2, 16).unwrap();
    let constant = GridField::new(grid, vec![3.0; grid.len()]).unwrap();
    assert_eq!(parabolic_bmo_norm(&constant), 0.0);
    let step = GridField::new(grid, grid.sample(|x, _| if x[0] < 0.5 { 1.0 } else { 0.0 })).unwrap();
    let v = parabolic_bmo_norm(&step);
    assert!((0.5..=1.0).contains(&v), "{v}");
    let shifted = GridField::new(grid, step.values.iter().map(|v| v + 7.0).collect()).unwrap();
    assert!((parabolic_bmo_norm(&shifted) - v).abs() < 1e-12);
}

#[test]
fn flat_graph_is_good() {
    let grid = Grid::unit(2, 8).unwrap();
    let g = Lip112Graph::new(GridField::new(grid, vec![0.0; grid.len()]).unwrap()).unwrap();
    assert_eq!(g.lip_constant_b, 0.0);
    let v = gpg_check(&g, 0.0, 0.0).unwrap();
    assert!(v.pass && v.data.b1 == 0.0 && v.data.bmo_norm_b2 == 0.0);
    let smooth = bump_graph(2, 16);
    let v = gpg_check(&smooth, 10.0, 10.0).unwrap();
    assert!(v.pass && v.data.b1 > 0.0 && v.data.bmo_norm_b2 > 0.0);
    assert!(smooth.lip_constant_b.is_finite() && smooth.lip_constant_b >= v.data.b1 * 0.99);
}

#[test]
fn lewis_silver_respects_its_modulus() {
    let g = lewis_silver_graph(2, 1.0, 16, 7).unwrap();
    assert!(g.lip_constant_b.is_finite());
    let grid = g.grid();
    let prof = lewis_silver_profile(1.0, grid.nt, grid.dt(), 7);
    assert!(modulus_ratio(&prof, grid.dt(), 1.0) <= 1.0);
    assert!(prof.iter().any(|&v| v != 0.0));
    assert!(matches!(lewis_silver_graph(1, 1.0, 16, 7), Err(Error::InvalidInput(_))));
    // same seed, same graph
    assert_eq!(g, lewis_silver_graph(2, 1.0, 16, 7).unwrap());
}

#[test]
fn graph_cloud_weights() {
    let g = bump_graph(2, 16);
    let set = g.cloud(0.5).unwrap();
    let grid = g.grid();
    assert_eq!(set.len(), grid.len());
    assert_eq!(set.dim_d(), 3.0);
    let cell = grid.dx * grid.dt();
    assert!(set.weights().iter().all(|&w| w >= cell && w <= cell * 2.0));
    assert!(set.r_min() >= 2.0 * grid.dx - 1e-12);
}
