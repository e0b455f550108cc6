mod common;

use std::f64::consts::PI;

use capillary::diagnostics::{
    difference_quotient, energy_law_report, gronwall_budget, korn_check, korn_ratio, l2l2_norm, loglog_slope,
    volume_conservation, Lattice,
};
use capillary::fixedpoint::Trajectory;
use capillary::io_cli::{build_scenario, run_manufactured, run_nonlinear, Manufactured, RunConfig};
use capillary::lagrangian::{flow_trajectory, FlowMap, PolarGrid};
use capillary::linear_stokes::{PhysicalParams, StokesSolver};
use capillary::Error;
use proptest::prelude::*;

fn wave() -> Lattice {
    Lattice::sample([0.0, 0.0], 1e-3, 2001, 3, |p| (3.0 * p[0]).sin() * (1.0 + p[1]))
}

/// Max error of D_h w against ∂₁w (order 1) or ∂₁₁w (order 2) at h = k·spacing.
fn quotient_error(k: f64, order: u32) -> f64 {
    let w = wave();
    let h = k * w.spacing;
    let d = difference_quotient(&w, [h, 0.0], order).unwrap();
    let mut err = 0.0f64;
    for i2 in 0..d.n2 {
        for i1 in 0..d.n1 {
            let p = d.point(i1, i2);
            let exact = if order == 1 {
                // Forward quotient approximates the derivative at the midpoint.
                3.0 * (3.0 * (p[0] + h / 2.0)).cos() * (1.0 + p[1])
            } else {
                -9.0 * (3.0 * p[0]).sin() * (1.0 + p[1])
            };
            err = err.max((d.get(i1, i2) - exact).abs());
        }
    }
    err
}

#[test]
fn difference_quotients_converge_at_second_order() {
    let ks = [40.0, 20.0, 10.0];
    let hs: Vec<f64> = ks.iter().map(|k| k * 1e-3).collect();
    for order in [1, 2] {
        let errs: Vec<f64> = ks.iter().map(|&k| quotient_error(k, order)).collect();
        let slope = loglog_slope(&hs, &errs);
        assert!((slope - 2.0).abs() < 0.15, "order {order}: {errs:?}");
    }
}

#[test]
fn first_quotient_is_first_order_at_the_node() {
    let w = wave();
    let mut errs = Vec::new();
    let hs = [4e-2, 2e-2, 1e-2];
    for h in hs {
        let d = difference_quotient(&w, [h, 0.0], 1).unwrap();
        errs.push((0..d.n1).map(|i| (d.get(i, 0) - 3.0 * (3.0 * d.point(i, 0)[0]).cos()).abs()).fold(0.0, f64::max));
    }
    assert!((loglog_slope(&hs, &errs) - 1.0).abs() < 0.1, "{errs:?}");
}

#[test]
fn difference_quotient_rejects_bad_offsets() {
    let w = wave();
    assert!(matches!(difference_quotient(&w, [0.01, 0.002], 1), Err(Error::OffsetNotTangential(_))));
    assert!(matches!(difference_quotient(&w, [0.0015, 0.0], 1), Err(Error::Validation { .. })));
    assert!(matches!(difference_quotient(&w, [0.0, 0.0], 1), Err(Error::Validation { .. })));
    assert!(matches!(difference_quotient(&w, [0.01, 0.0], 3), Err(Error::Validation { .. })));
}

#[test]
fn backward_quotient_matches_forward_shifted() {
    let w = wave();
    let f = difference_quotient(&w, [0.005, 0.0], 1).unwrap();
    let b = difference_quotient(&w, [-0.005, 0.0], 1).unwrap();
    assert_eq!(f.n1, b.n1);
    for i in 0..f.n1 {
        assert!((f.get(i, 1) + b.get(i, 1)).abs() < 1e-9);
    }
}

#[test]
fn korn_ratio_of_rotation() {
    // ∫|∇u|² = 2π, ‖u‖² = π/2 and Def u = 0 on the unit disk.
    let grid = PolarGrid::new(12, 24).unwrap();
    let u = grid.sample_vec(|p| [-p[1], p[0]]);
    assert!((korn_ratio(&grid, &u) - 4.0).abs() < 1e-12);
}

#[test]
fn korn_constant_is_stable() {
    let grid = PolarGrid::new(16, 32).unwrap();
    let r = korn_check(&grid, 40, 1).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.constant > 0.0 && r.constant.is_finite(), "{r:?}");
    assert!(matches!(korn_check(&grid, 5, 1), Err(Error::Validation { .. })));
}

#[test]
fn l2l2_norm_of_a_steady_field() {
    let grid = PolarGrid::new(10, 20).unwrap();
    let u = grid.sample_vec(|_| [1.0, 0.0]);
    let v = vec![u; 11];
    assert!((l2l2_norm(&grid, &v, 0.1) - PI.sqrt()).abs() < 1e-12);
}

#[test]
fn volume_is_conserved_by_rotation_but_not_dilation() {
    let grid = PolarGrid::new(10, 20).unwrap();
    // Lagrangian velocity of a rigid rotation: R(t)(−x₂, x₁).
    let rot: Vec<_> = (0..11)
        .map(|n| {
            let (c, s) = ((n as f64 * 1e-3).cos(), (n as f64 * 1e-3).sin());
            grid.sample_vec(|p| [-(s * p[0] + c * p[1]), c * p[0] - s * p[1]])
        })
        .collect();
    let flows = flow_trajectory(&grid, &rot, 1e-3).unwrap();
    assert!(volume_conservation(&flows) < 1e-5);
    let dil = grid.sample_vec(|p| [p[0], p[1]]);
    let flow = FlowMap::from_positions(&grid, dil.iter().map(|c| c.iter().map(|x| 1.1 * x).collect()).collect::<Vec<_>>().try_into().unwrap(), 0.0).unwrap();
    assert!((volume_conservation(&[flow]) - 0.21).abs() < 1e-10);
}

#[test]
fn energy_report_for_the_ellipse() {
    let cfg = RunConfig { scenario: "perturbed_ellipse".into(), t_final: 0.02, dt: 2e-3, ..Default::default() };
    let s = build_scenario(&cfg).unwrap();
    let sol = run_nonlinear(&cfg, &s).unwrap();
    let params = cfg.params().unwrap();
    let rep = energy_law_report(&s.grid, &params, &sol.solution, &sol.flows, Some(&sol.data)).unwrap();
    assert_eq!(rep.law_residual[0], 0.0);
    assert!(rep.non_increasing());
    assert!(rep.total[10] < rep.total[0]);
    // The initial shape is an ellipse with the stated area-preserving axes.
    let a = (1.0f64 - 0.09).powf(-0.25);
    let b = 1.0 / a;
    let h = ((a - b) / (a + b)).powi(2);
    let ramanujan = PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()));
    assert!((rep.area[0] - ramanujan).abs() < 1e-8);
    let csv = rep.to_csv();
    assert!(csv.starts_with("t,K,A,total,dissipation,residual,y,phi\n"));
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn gronwall_budget_is_feasible_for_the_manufactured_solve() {
    let cfg = RunConfig { scenario: "manufactured_linear".into(), t_final: 0.05, ..Default::default() };
    let s = build_scenario(&cfg).unwrap();
    assert!(run_manufactured(&cfg, &s).unwrap().velocity < 1e-6);
    let params = PhysicalParams::new(1.0, 1.0).unwrap();
    let nsteps = 50;
    let data = Manufactured.data(&s.grid, &params, nsteps, cfg.dt).unwrap();
    let sol = StokesSolver::new(s.grid.clone(), 16, params).unwrap().solve(&data).unwrap();
    let rep = gronwall_budget(&s.grid, &sol.velocity, cfg.dt, Some(&data));
    assert!(rep.feasible, "{:?}", rep.constants);
    assert!(rep.constants.iter().all(|c| *c >= 0.0));
    assert!(rep.y.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn empty_trajectory_budget() {
    let grid = PolarGrid::new(6, 12).unwrap();
    let rep = gronwall_budget(&grid, &[], 0.1, None);
    assert!(rep.feasible && rep.y.is_empty());
    let _ = Trajectory::zeros(grid.npts(), 0, 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loglog_slope_recovers_power_laws(p in -3.0f64..3.0, c in 0.1f64..10.0) {
        let x = [0.1, 0.2, 0.4, 0.8];
        let y: Vec<f64> = x.iter().map(|v: &f64| c * v.powf(p)).collect();
        prop_assert!((loglog_slope(&x, &y) - p).abs() < 1e-10);
    }

    #[test]
    fn quotient_of_linear_function_is_exact(a in -5.0f64..5.0, b in -5.0f64..5.0, k in 1usize..20) {
        let w = Lattice::sample([0.3, 0.0], 0.01, 60, 4, |p| a * p[0] + b * p[1]);
        let d = difference_quotient(&w, [k as f64 * 0.01, 0.0], 1).unwrap();
        for v in &d.values {
            prop_assert!((v - a).abs() < 1e-9);
        }
        let d2 = difference_quotient(&w, [k as f64 * 0.01, 0.0], 2).unwrap();
        for v in &d2.values {
            prop_assert!(v.abs() < 1e-7);
        }
    }
}
