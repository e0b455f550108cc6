//! Verification instruments: energy law, Gronwall budget, Korn constant,
//! difference quotients and volume conservation.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{axpy, frob2, VectorField};
use crate::fixedpoint::{trapezoid_weights, Trajectory};
use crate::geometry::{sobolev_norm_with, surface_area};
use crate::lagrangian::{deformation_from_gradient, pushforward_boundary, FlowMap, PolarGrid};
use crate::linear_stokes::{time_integral, zernike_modes_to_degree, LinearProblemData, PhysicalParams};

/// Energy bookkeeping along a trajectory. Entry n of `law_residual` is the
/// defect over the step (t_{n−1}, t_n]; entry 0 is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    /// K = ½∫|v|² det∇η.
    pub kinetic: Vec<f64>,
    /// Perimeter of η(Γ₀).
    pub area: Vec<f64>,
    /// (ν/2)∫|D_η v|² det∇η.
    pub dissipation: Vec<f64>,
    /// K + σA.
    pub total: Vec<f64>,
    pub law_residual: Vec<f64>,
    pub y: Vec<f64>,
    pub phi: Vec<f64>,
}

impl EnergyReport {
    pub fn max_residual(&self) -> f64 {
        self.law_residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Largest one-step increase of K + σA.
    pub fn max_increase(&self) -> f64 {
        self.total.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Non-increasing within the residual bound: every step rises by at
    /// most dt times the largest law residual.
    pub fn non_increasing(&self) -> bool {
        if self.times.len() < 2 {
            return true;
        }
        let dt = self.times[1] - self.times[0];
        self.max_increase() <= dt * self.max_residual()
    }

    /// CSV with columns t, K, A, total, dissipation, residual, y, phi.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,K,A,total,dissipation,residual,y,phi\n");
        for i in 0..self.times.len() {
            let _ = writeln!(
                s,
                "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
                self.times[i],
                self.kinetic[i],
                self.area[i],
                self.total[i],
                self.dissipation[i],
                self.law_residual[i],
                self.y[i],
                self.phi[i]
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let n = self.times.len();
        let mut s = String::new();
        let _ = writeln!(s, "samples = {n}");
        if n > 0 {
            let _ = writeln!(s, "total_initial = {:.10e}", self.total[0]);
            let _ = writeln!(s, "total_final = {:.10e}", self.total[n - 1]);
        }
        let _ = writeln!(s, "max_law_residual = {:.6e}", self.max_residual());
        let _ = writeln!(s, "max_step_increase = {:.6e}", if n > 1 { self.max_increase() } else { 0.0 });
        let _ = writeln!(s, "non_increasing = {}", self.non_increasing());
        s
    }
}

/// K, A and the dissipation at one level.
fn energy_terms(grid: &PolarGrid, params: &PhysicalParams, v: &VectorField, flow: &FlowMap) -> Result<[f64; 3]> {
    let det = &flow.det_grad_eta;
    let speed: Vec<f64> = (0..grid.npts()).map(|p| (v[0][p] * v[0][p] + v[1][p] * v[1][p]) * det[p]).collect();
    let kinetic = 0.5 * grid.integrate(&speed);
    let area = surface_area(&pushforward_boundary(grid, flow)?)?;
    let d = deformation_from_gradient(&grid.grad_vec(v), &flow.a);
    let dd: Vec<f64> = d.iter().zip(det).map(|(m, j)| frob2(m, m) * j).collect();
    let dissipation = 0.5 * params.nu * grid.integrate(&dd);
    Ok([kinetic, area, dissipation])
}

/// Energy law report. `data`, when given, feeds the forcing budget φ.
pub fn energy_law_report(
    grid: &PolarGrid,
    params: &PhysicalParams,
    traj: &Trajectory,
    flows: &[FlowMap],
    data: Option<&LinearProblemData>,
) -> Result<EnergyReport> {
    if flows.len() != traj.len() {
        return Err(Error::NodeCountMismatch("flow and velocity trajectories differ in length".into()));
    }
    let terms: Vec<[f64; 3]> = (0..traj.len())
        .into_par_iter()
        .map(|t| energy_terms(grid, params, &traj.velocity[t], &flows[t]))
        .collect::<Result<_>>()?;
    let kinetic: Vec<f64> = terms.iter().map(|t| t[0]).collect();
    let area: Vec<f64> = terms.iter().map(|t| t[1]).collect();
    let dissipation: Vec<f64> = terms.iter().map(|t| t[2]).collect();
    let total: Vec<f64> = kinetic.iter().zip(&area).map(|(k, a)| k + params.sigma * a).collect();
    let dt = traj.dt;
    let mut law_residual = vec![0.0; traj.len()];
    for n in 1..traj.len() {
        law_residual[n] = (total[n] - total[n - 1]) / dt + 0.5 * (dissipation[n] + dissipation[n - 1]);
    }
    let budget = gronwall_budget(grid, &traj.velocity, dt, data);
    Ok(EnergyReport {
        times: traj.times(),
        kinetic,
        area,
        dissipation,
        total,
        law_residual,
        y: budget.y,
        phi: budget.phi,
    })
}

/// Result of the qualitative Gronwall check
/// y' ≤ (c₂t + c₁)y + c₃φ + ‖w₀‖².
#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub y_prime: Vec<f64>,
    pub phi: Vec<f64>,
    pub w0_sq: f64,
    /// Fitted (c₁, c₂, c₃), all nonnegative.
    pub constants: [f64; 3],
    pub feasible: bool,
}

/// Nonnegative least squares for a handful of columns: best fit over all
/// active sets.
fn nnls_small(cols: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let k = cols.len();
    let mut best = vec![0.0; k];
    let mut best_res = rhs.iter().map(|r| r * r).sum::<f64>();
    for mask in 1u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let a = DMatrix::from_fn(rhs.len(), active.len(), |r, c| cols[active[c]][r]);
        let b = DVector::from_column_slice(rhs);
        let Ok(sol) = a.clone().svd(true, true).solve(&b, 1e-14) else { continue };
        if sol.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            continue;
        }
        let res = (&a * &sol - &b).norm_squared();
        if res < best_res {
            best_res = res;
            best = vec![0.0; k];
            for (c, &i) in active.iter().enumerate() {
                best[i] = sol[c];
            }
        }
    }
    best
}

/// The budget y(t) = ∫₀ᵗ[‖w‖² + ∫_Γ|∫₀ˢ N·∇w|² + ∫₀ˢ‖w‖²_{H¹}] ds and the
/// forcing budget φ(t) = ‖f‖²_{L²L²} + ‖g‖²_{L²H^{-1/2}} + ‖B‖²_{L²L²}
/// (the H¹-dual norm of f is bounded by its L² norm), with constants fitted
/// by nonnegative least squares and inflated until the inequality holds.
pub fn gronwall_budget(
    grid: &PolarGrid,
    w: &[VectorField],
    dt: f64,
    data: Option<&LinearProblemData>,
) -> GronwallReport {
    let n = w.len();
    let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    if n == 0 {
        return GronwallReport {
            times,
            y: vec![],
            y_prime: vec![],
            phi: vec![],
            w0_sq: 0.0,
            constants: [0.0; 3],
            feasible: true,
        };
    }
    let normals = &grid.boundary_normals().normals;
    let off = grid.boundary_offset();
    let metric = grid.boundary_metric();
    let l2: Vec<f64> = w.iter().map(|v| grid.inner_vec(v, v)).collect();
    let h1: Vec<f64> = w
        .iter()
        .map(|v| {
            let g = grid.grad_vec(v);
            let gg: Vec<f64> = g.iter().map(|m| frob2(m, m)).collect();
            grid.inner_vec(v, v) + grid.integrate(&gg)
        })
        .collect();
    let ndw: Vec<VectorField> = w
        .iter()
        .map(|v| {
            let g = grid.grad_vec(v);
            let mut out = [vec![0.0; grid.npts()], vec![0.0; grid.npts()]];
            for j in 0..grid.ntheta {
                let nn = normals[j];
                for i in 0..2 {
                    out[i][off + j] = g[off + j][i][0] * nn[0] + g[off + j][i][1] * nn[1];
                }
            }
            out
        })
        .collect();
    let indw = time_integral(&ndw, dt);
    let bnd: Vec<f64> = indw
        .iter()
        .map(|v| {
            let s: Vec<f64> = (0..grid.ntheta).map(|j| v[0][off + j].powi(2) + v[1][off + j].powi(2)).collect();
            metric.integrate(&s)
        })
        .collect();
    let mut ih1 = vec![0.0; n];
    for i in 1..n {
        ih1[i] = ih1[i - 1] + 0.5 * dt * (h1[i] + h1[i - 1]);
    }
    let y_prime: Vec<f64> = (0..n).map(|i| l2[i] + bnd[i] + ih1[i]).collect();
    let mut y = vec![0.0; n];
    for i in 1..n {
        y[i] = y[i - 1] + 0.5 * dt * (y_prime[i] + y_prime[i - 1]);
    }
    let phi_rate: Vec<f64> = match data {
        None => vec![0.0; n],
        Some(d) => (0..n.min(d.len()))
            .map(|i| {
                let f = grid.inner_vec(&d.f_bar[i], &d.f_bar[i]);
                let fft = grid.angular_fft();
                let g: f64 = (0..2)
                    .map(|c| {
                        let comp: Vec<f64> = d.g_bar[i].iter().map(|v| v[c]).collect();
                        sobolev_norm_with(fft, &comp, -0.5).powi(2)
                    })
                    .sum();
                let b2: Vec<f64> = d.b_bar[i].iter().map(|b| b * b).collect();
                f + g + metric.integrate(&b2)
            })
            .chain(std::iter::repeat(0.0))
            .take(n)
            .collect(),
    };
    let mut phi = vec![0.0; n];
    for i in 1..n {
        phi[i] = phi[i - 1] + 0.5 * dt * (phi_rate[i] + phi_rate[i - 1]);
    }
    let w0_sq = l2[0];
    let rhs: Vec<f64> = y_prime.iter().map(|yp| yp - w0_sq).collect();
    let cols = vec![y.clone(), times.iter().zip(&y).map(|(t, y)| t * y).collect(), phi.clone()];
    let mut c = nnls_small(&cols, &rhs);
    // Inflate c₁ until every sample satisfies the inequality.
    let slack = |c: &[f64], i: usize| (c[1] * times[i] + c[0]) * y[i] + c[2] * phi[i] + w0_sq - y_prime[i];
    let tol = 1e-12 * y_prime.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        let s = slack(&c, i);
        if s < -tol && y[i] > 0.0 {
            c[0] += -s / y[i];
        }
    }
    let feasible = (0..n).all(|i| slack(&c, i) >= -tol);
    GronwallReport { times, y, y_prime, phi, w0_sq, constants: [c[0], c[1], c[2]], feasible }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KornReport {
    /// max ‖∇u‖²/(‖u‖² + ‖Def u‖²) over the samples.
    pub constant: f64,
    /// The same over twice as many samples.
    pub constant_doubled: f64,
    pub pass: bool,
}

/// ‖∇u‖²/(‖u‖² + ‖Def u‖²) of one field.
pub fn korn_ratio(grid: &PolarGrid, u: &VectorField) -> f64 {
    let g = grid.grad_vec(u);
    let gg: Vec<f64> = g.iter().map(|m| frob2(m, m)).collect();
    let d = crate::lagrangian::def_from_gradient(&g);
    let dd: Vec<f64> = d.iter().map(|m| frob2(m, m)).collect();
    grid.integrate(&gg) / (grid.inner_vec(u, u) + grid.integrate(&dd))
}

/// Random polynomial vector field of degree ≤ 4 with normal coefficients.
pub fn random_smooth_field(grid: &PolarGrid, rng: &mut ChaCha8Rng) -> VectorField {
    let modes = zernike_modes_to_degree(4);
    let mut u = [vec![0.0; grid.npts()], vec![0.0; grid.npts()]];
    for z in &modes {
        let s = z.sample(grid);
        for c in u.iter_mut() {
            axpy(rng.gen_range(-1.0..1.0), &s, c);
        }
    }
    u
}

/// Fitted Korn constant over `sample_count` random fields, compared with a
/// run over twice as many; passes when finite and within 20%.
pub fn korn_check(grid: &PolarGrid, sample_count: usize, seed: u64) -> Result<KornReport> {
    if sample_count < 20 {
        return Err(Error::Validation { field: "sample_count".into(), msg: "must be at least 20".into() });
    }
    let fit = |count: usize, s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        (0..count).map(|_| korn_ratio(grid, &random_smooth_field(grid, &mut rng))).fold(0.0, f64::max)
    };
    let constant = fit(sample_count, seed);
    let constant_doubled = fit(2 * sample_count, seed.wrapping_add(1));
    let pass = constant.is_finite()
        && constant_doubled.is_finite()
        && (constant_doubled - constant).abs() <= 0.2 * constant;
    Ok(KornReport { constant, constant_doubled, pass })
}

/// Uniform lattice on the half-plane x₂ ≥ 0 with normal e₂; values are
/// stored row-major, `values[i2 * n1 + i1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub n1: usize,
    pub n2: usize,
    pub values: Vec<f64>,
}

impl Lattice {
    pub fn sample(origin: [f64; 2], spacing: f64, n1: usize, n2: usize, f: impl Fn([f64; 2]) -> f64) -> Self {
        let mut values = Vec::with_capacity(n1 * n2);
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                values.push(f(Self::point_of(origin, spacing, i1, i2)));
            }
        }
        Lattice { origin, spacing, n1, n2, values }
    }

    fn point_of(origin: [f64; 2], spacing: f64, i1: usize, i2: usize) -> [f64; 2] {
        [origin[0] + i1 as f64 * spacing, origin[1] + i2 as f64 * spacing]
    }

    pub fn point(&self, i1: usize, i2: usize) -> [f64; 2] {
        Self::point_of(self.origin, self.spacing, i1, i2)
    }

    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        self.values[i2 * self.n1 + i1]
    }

    /// Discrete L² norm with cell area spacing².
    pub fn l2(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.spacing * self.spacing).sqrt()
    }
}

/// D_h w = (w(x+h) − w(x))/|h| (order 1) or
/// D_{−h}D_h w = (w(x+h) + w(x−h) − 2w(x))/|h|² (order 2), on the nodes
/// where every shifted value exists. `h` must be tangential and a nonzero
/// multiple of the spacing.
pub fn difference_quotient(w: &Lattice, h: [f64; 2], order: u32) -> Result<Lattice> {
    if h[1] != 0.0 {
        return Err(Error::OffsetNotTangential(h[1]));
    }
    let steps = h[0] / w.spacing;
    let s = steps.round();
    if s == 0.0 || (steps - s).abs() > 1e-9 {
        return Err(Error::Validation { field: "h".into(), msg: "must be a nonzero multiple of the spacing".into() });
    }
    if order != 1 && order != 2 {
        return Err(Error::Validation { field: "order".into(), msg: "must be 1 or 2".into() });
    }
    let k = s.abs() as usize;
    let hl = h[0].abs();
    let (lo, hi) = match (order, s > 0.0) {
        (1, true) => (0, w.n1.saturating_sub(k)),
        (1, false) => (k, w.n1),
        _ => (k, w.n1.saturating_sub(k)),
    };
    let n1 = hi.saturating_sub(lo);
    let mut values = Vec::with_capacity(n1 * w.n2);
    for i2 in 0..w.n2 {
        for i1 in lo..hi {
            let v = if order == 1 {
                let j = if s > 0.0 { i1 + k } else { i1 - k };
                (w.get(j, i2) - w.get(i1, i2)) / hl
            } else {
                (w.get(i1 + k, i2) + w.get(i1 - k, i2) - 2.0 * w.get(i1, i2)) / (hl * hl)
            };
            values.push(v);
        }
    }
    Ok(Lattice { origin: w.point(lo, 0), spacing: w.spacing, n1, n2: w.n2, values })
}

/// max over time and nodes of |det∇η − 1|.
pub fn volume_conservation(flows: &[FlowMap]) -> f64 {
    flows
        .iter()
        .flat_map(|f| f.det_grad_eta.iter().map(|d| (d - 1.0).abs()))
        .fold(0.0, f64::max)
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Time-integrated L² norm of a velocity trajectory.
pub fn l2l2_norm(grid: &PolarGrid, v: &[VectorField], dt: f64) -> f64 {
    trapezoid_weights(v.len(), dt).iter().zip(v).map(|(w, f)| w * grid.inner_vec(f, f)).sum::<f64>().sqrt()
}
