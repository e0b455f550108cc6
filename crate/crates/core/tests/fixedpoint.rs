mod common;

use capillary::field::zeros_vec;
use capillary::fixedpoint::{
    compute_iteration_forcings, contraction_monitor, deformed_boundary, discrete_x_norm, solve_nonlinear, theta_map,
    trapezoid_weights, IterationConfig, NonlinearProblem, Trajectory,
};
use capillary::io_cli::{build_scenario, ellipse_map, run_nonlinear, RunConfig};
use capillary::lagrangian::{FlowMap, PolarGrid};
use capillary::linear_stokes::PhysicalParams;
use capillary::Error;
use common::max_abs;
use proptest::prelude::*;

fn unit() -> PhysicalParams {
    PhysicalParams::new(1.0, 1.0).unwrap()
}

#[test]
fn forcings_vanish_on_the_identity_flow() {
    let grid = PolarGrid::new(12, 24).unwrap();
    let traj = Trajectory::zeros(grid.npts(), 4, 0.01);
    let flows = vec![FlowMap::identity(&grid); 5];
    let geom: Vec<_> = flows.iter().map(|f| deformed_boundary(&grid, f).unwrap()).collect();
    let sigma = 1.7;
    let params = PhysicalParams::new(0.9, sigma).unwrap();
    let f = compute_iteration_forcings(&grid, &params, &traj, &flows, &geom).unwrap();
    for t in 0..5 {
        assert!(max_abs(f.f_bar[t].iter().flatten().cloned()) < 1e-13);
        assert!(max_abs(f.a_bar[t].iter().cloned()) < 1e-13);
        assert!(max_abs(f.g1[t].iter().flat_map(|v| [v[0], v[1]])) < 1e-13);
        assert!(max_abs(f.g2[t].iter().cloned()) < 1e-13);
        assert!(max_abs(f.b_bar[t].iter().cloned()) < 1e-13);
        // σN·Δ₀x = −σ on the unit circle.
        assert!(max_abs(f.surface[t].iter().map(|s| s + sigma)) < 1e-12);
    }
    assert_eq!(f.tangency_defect(&grid), 0.0);
}

#[test]
fn forcings_reject_length_mismatch() {
    let grid = PolarGrid::new(8, 16).unwrap();
    let traj = Trajectory::zeros(grid.npts(), 4, 0.01);
    let flows = vec![FlowMap::identity(&grid); 3];
    let geom: Vec<_> = flows.iter().map(|f| deformed_boundary(&grid, f).unwrap()).collect();
    assert!(matches!(
        compute_iteration_forcings(&grid, &unit(), &traj, &flows, &geom),
        Err(Error::NodeCountMismatch(_))
    ));
}

#[test]
fn contraction_monitor_examples() {
    let c = contraction_monitor(&[1.0, 0.5, 0.25, 0.125]);
    assert!((c.rho - 0.5).abs() < 1e-12 && c.contracting && c.strictly_decreasing && c.used == 4);
    let c = contraction_monitor(&[1.0, 2.0, 4.0]);
    assert!((c.rho - 2.0).abs() < 1e-12 && !c.contracting);
    // Iterate 1 may exceed iterate 0; strictness is checked from iterate 2 on.
    let c = contraction_monitor(&[1.0, 3.0, 0.3, 0.03]);
    assert!(c.strictly_decreasing);
    let c = contraction_monitor(&[1.0, 0.1, 0.2]);
    assert!(!c.strictly_decreasing);
    let c = contraction_monitor(&[1e-3, 1e-6, 0.0]);
    assert_eq!(c.rho, 0.0);
    assert!(c.contracting);
    assert!(contraction_monitor(&[1.0]).rho.is_nan());
}

#[test]
fn trapezoid_weights_integrate_linear_functions() {
    let w = trapezoid_weights(11, 0.1);
    let s: f64 = w.iter().enumerate().map(|(i, wi)| wi * (3.0 * i as f64 * 0.1 + 1.0)).sum();
    assert!((s - 2.5).abs() < 1e-12);
}

#[test]
fn config_validation_names_fields() {
    let bad = |c: IterationConfig| match c.validate() {
        Err(Error::Validation { field, .. }) => field,
        other => panic!("{other:?}"),
    };
    assert_eq!(bad(IterationConfig::new(0.1, 0.03, 4)), "dt");
    assert_eq!(bad(IterationConfig::new(-0.1, 0.01, 4)), "T");
    assert_eq!(bad(IterationConfig::new(0.1, 0.01, 0)), "m");
    assert_eq!(bad(IterationConfig { inner_tol: 0.0, ..IterationConfig::new(0.1, 0.01, 4) }), "inner_tol");
    assert_eq!(bad(IterationConfig { m_cap: Some(-1.0), ..IterationConfig::new(0.1, 0.01, 4) }), "M_cap");
}

#[test]
fn horizon_beyond_trust_region_is_refused() {
    let grid = PolarGrid::new(8, 16).unwrap();
    let p = NonlinearProblem::new(grid.clone(), unit(), 6, zeros_vec(grid.npts())).unwrap();
    let cfg = IterationConfig { t_max: 0.05, ..IterationConfig::new(0.1, 0.01, 6) };
    assert!(matches!(solve_nonlinear(&p, &cfg), Err(Error::HorizonTooLarge(_))));
}

#[test]
fn fast_spin_loses_geometric_control() {
    let cfg = RunConfig { scenario: "custom".into(), spin: 10.0, t_final: 0.2, ..Default::default() };
    let s = build_scenario(&cfg).unwrap();
    match run_nonlinear(&cfg, &s) {
        Err(Error::HorizonTooLarge(msg)) => assert!(msg.contains("geometric controls"), "{msg}"),
        other => panic!("expected HorizonTooLarge, got {other:?}"),
    }
}

#[test]
fn tiny_trust_radius_rejects_the_seed() {
    let grid = PolarGrid::new(8, 16).unwrap();
    let u0 = grid.sample_vec(|p| [-p[1], p[0]]);
    let p = NonlinearProblem::new(grid.clone(), unit(), 6, u0.clone()).unwrap();
    let cfg = IterationConfig { m_cap: Some(1e-6), ..IterationConfig::new(0.02, 0.01, 6) };
    let seed = Trajectory::constant(&u0, 2, 0.01);
    assert!(matches!(theta_map(&p, &seed, &cfg), Err(Error::OutsideTrustRegion { .. })));
}

#[test]
fn seed_must_start_at_the_initial_velocity() {
    let grid = PolarGrid::new(8, 16).unwrap();
    let u0 = grid.sample_vec(|p| [-p[1], p[0]]);
    let p = NonlinearProblem::new(grid.clone(), unit(), 6, u0).unwrap();
    let cfg = IterationConfig::new(0.02, 0.01, 6);
    let seed = Trajectory::zeros(grid.npts(), 2, 0.01);
    assert!(theta_map(&p, &seed, &cfg).is_err());
}

#[test]
fn equilibrium_disk_stays_at_rest() {
    let cfg = RunConfig { t_final: 0.02, ..Default::default() };
    let s = build_scenario(&cfg).unwrap();
    let sol = run_nonlinear(&cfg, &s).unwrap();
    assert!(sol.solution.velocity.iter().all(|v| max_abs(v.iter().flatten().cloned()) < 1e-12));
    assert!(sol.solution.pressure.iter().all(|q| max_abs(q.iter().map(|x| x - 1.0)) < 1e-10));
    assert!(sol.boundary_residual < 1e-10);
}

#[test]
fn rigid_rotation_of_the_disk_is_a_fixed_point() {
    // A spinning disk keeps its shape: η(t) = R(ωt)x, so the Lagrangian
    // velocity is ωR(ωt)(−x₂, x₁), and the pressure is σ + ω²(r² − 1)/2.
    let omega = 0.5;
    let cfg = RunConfig { scenario: "custom".into(), ecc: 0.0, spin: omega, t_final: 0.02, ..Default::default() };
    let s = build_scenario(&cfg).unwrap();
    let sol = run_nonlinear(&cfg, &s).unwrap();
    for (n, v) in sol.solution.velocity.iter().enumerate() {
        let (c, sn) = ((omega * n as f64 * cfg.dt).cos(), (omega * n as f64 * cfg.dt).sin());
        let want = s.grid.sample_vec(|p| {
            let r = [c * p[0] - sn * p[1], sn * p[0] + c * p[1]];
            [-omega * r[1], omega * r[0]]
        });
        let d = v.iter().flatten().zip(want.iter().flatten()).map(|(a, b)| a - b);
        assert!(max_abs(d) < 1e-8);
    }
    let grid = &s.grid;
    let q = sol.solution.pressure.last().unwrap();
    let want = grid.sample(|p| 1.0 + 0.5 * omega * omega * (p[0] * p[0] + p[1] * p[1] - 1.0));
    let err = max_abs(q.iter().zip(&want).map(|(a, b)| a - b));
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn ellipse_relaxes_with_contraction() {
    let cfg = RunConfig { scenario: "perturbed_ellipse".into(), t_final: 0.03, ..Default::default() };
    let s = build_scenario(&cfg).unwrap();
    let sol = run_nonlinear(&cfg, &s).unwrap();
    assert!(sol.contraction.contracting && sol.contraction.rho < 1e-2);
    assert!(sol.cap_usage < 1.0);
    assert!(sol.max_tangency < 1e-12);
    assert!(sol.outer.last().unwrap().rel_change <= cfg.inner_tol);
    // Surface tension pulls the long axis in.
    let v = sol.solution.velocity.last().unwrap();
    let grid = &s.grid;
    let tip = grid.idx(grid.nr - 1, 0);
    assert!(grid.points[tip][0] > 1.0 && v[0][tip] < 0.0);
}

fn sample_traj(grid: &PolarGrid, a: f64, b: f64) -> Trajectory {
    let mut t = Trajectory::zeros(grid.npts(), 3, 0.01);
    for (n, v) in t.velocity.iter_mut().enumerate() {
        let s = 1.0 + n as f64 * 0.1;
        *v = grid.sample_vec(|p| [a * s * p[1], -a * s * p[0] + b * p[0] * p[1]]);
    }
    for (n, q) in t.pressure.iter_mut().enumerate() {
        *q = grid.sample(|p| b * (n as f64) * p[0] + a);
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn x_norm_is_a_norm(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -3.0f64..3.0) {
        let grid = PolarGrid::with_map(10, 20, ellipse_map(0.2)).unwrap();
        let u = sample_traj(&grid, a, b);
        let v = sample_traj(&grid, b, -a);
        let nu = discrete_x_norm(&grid, &u);
        prop_assert!((discrete_x_norm(&grid, &u.scaled(c)) - c.abs() * nu).abs() <= 1e-10 * nu.max(1.0));
        let sum = u.difference(&v.scaled(-1.0));
        prop_assert!(discrete_x_norm(&grid, &sum) <= nu + discrete_x_norm(&grid, &v) + 1e-10);
        prop_assert_eq!(discrete_x_norm(&grid, &u.difference(&u)), 0.0);
    }
}
