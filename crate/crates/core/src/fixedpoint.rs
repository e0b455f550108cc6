//! The nonlinear scheme. Θ_T maps a candidate (v, q) to the solution of a
//! linear problem posed on the flow map of v; that linear problem is itself
//! solved by successive approximation around the basic linear solver. The
//! outer iteration looks for a fixed point of Θ_T.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{dot2, matvec2, mul2, sub, sub_vec, transpose2, zeros_vec, MatrixField, VectorField};
use crate::geometry::{
    compute_metric, sobolev_norm_with, surface_laplacian_vec, SurfaceMetric,
};
use crate::lagrangian::{
    def_from_gradient, deformation_from_gradient, flow_trajectory, geometric_controls, pushforward_boundary,
    ControlReport, FlowMap, PolarGrid, CONTROL_THRESHOLD,
};
use crate::linear_stokes::{
    time_derivative, time_derivative_scalar, time_integral, LinearProblemData, PhysicalParams, StokesSolver,
};

/// External body force f(t, x), evaluated at deformed positions.
pub type Forcing = dyn Fn(f64, [f64; 2]) -> [f64; 2] + Send + Sync;

/// Ratio streak that triggers [`Error::NoContraction`].
pub const NO_CONTRACTION_STREAK: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationConfig {
    /// Horizon T.
    pub t_final: f64,
    pub dt: f64,
    /// Galerkin modes.
    pub m: usize,
    /// Relative X-norm tolerance, shared by the inner and outer loops.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub outer_max_iter: usize,
    /// Radius of the trust region C_T; `None` derives it from the seed.
    pub m_cap: Option<f64>,
    /// Largest accepted horizon.
    pub t_max: f64,
}

impl IterationConfig {
    pub fn new(t_final: f64, dt: f64, m: usize) -> Self {
        IterationConfig {
            t_final,
            dt,
            m,
            inner_tol: 1e-7,
            inner_max_iter: 40,
            outer_max_iter: 40,
            m_cap: None,
            t_max: 1.0,
        }
    }

    pub fn nsteps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Validation { field: field.into(), msg: msg.into() });
        if !(self.t_final > 0.0) {
            return bad("T", "must be positive");
        }
        if !(self.dt > 0.0) || self.dt > self.t_final {
            return bad("dt", "must lie in (0, T]");
        }
        let n = self.nsteps();
        if ((n as f64) * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return bad("dt", "T must be an integer multiple of dt");
        }
        if self.m == 0 {
            return bad("m", "must be positive");
        }
        if !(self.inner_tol > 0.0) {
            return bad("inner_tol", "must be positive");
        }
        if self.inner_max_iter == 0 {
            return bad("inner_max_iter", "must be positive");
        }
        if self.outer_max_iter == 0 {
            return bad("outer_max_iter", "must be positive");
        }
        if let Some(c) = self.m_cap {
            if !(c > 0.0) {
                return bad("M_cap", "must be positive");
            }
        }
        if !(self.t_max > 0.0) {
            return bad("T_max", "must be positive");
        }
        Ok(())
    }
}

/// Velocity and pressure sampled at t_n = n·dt.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub velocity: Vec<VectorField>,
    pub pressure: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn zeros(npts: usize, nsteps: usize, dt: f64) -> Self {
        Trajectory { dt, velocity: vec![zeros_vec(npts); nsteps + 1], pressure: vec![vec![0.0; npts]; nsteps + 1] }
    }

    /// u₀ held constant in time, zero pressure.
    pub fn constant(u0: &VectorField, nsteps: usize, dt: f64) -> Self {
        let npts = u0[0].len();
        Trajectory { dt, velocity: vec![u0.clone(); nsteps + 1], pressure: vec![vec![0.0; npts]; nsteps + 1] }
    }

    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| n as f64 * self.dt).collect()
    }

    pub fn difference(&self, other: &Trajectory) -> Trajectory {
        Trajectory {
            dt: self.dt,
            velocity: self.velocity.iter().zip(&other.velocity).map(|(a, b)| sub_vec(a, b)).collect(),
            pressure: self.pressure.iter().zip(&other.pressure).map(|(a, b)| sub(a, b)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Trajectory {
        Trajectory {
            dt: self.dt,
            velocity: self
                .velocity
                .iter()
                .map(|v| [v[0].iter().map(|x| c * x).collect(), v[1].iter().map(|x| c * x).collect()])
                .collect(),
            pressure: self.pressure.iter().map(|p| p.iter().map(|x| c * x).collect()).collect(),
        }
    }
}

/// Squared components of the discrete X_T norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct XNormParts {
    pub u_h3: f64,
    pub ut_h1: f64,
    pub p_h2: f64,
    pub pt_l2: f64,
    pub grad_ut_boundary: f64,
    pub pt_boundary: f64,
}

impl XNormParts {
    pub fn total(&self) -> f64 {
        (self.u_h3 + self.ut_h1 + self.p_h2 + self.pt_l2 + self.grad_ut_boundary + self.pt_boundary).sqrt()
    }
}

/// Σ_{|α|≤k} ‖∂^α f‖², counting ordered multi-indices.
pub fn sobolev_sq(grid: &PolarGrid, f: &[f64], k: usize) -> f64 {
    let mut level = vec![f.to_vec()];
    let mut acc = grid.inner(f, f);
    for _ in 0..k {
        level = level
            .iter()
            .flat_map(|g| {
                let [a, b] = grid.grad(g);
                [a, b]
            })
            .collect();
        acc += level.iter().map(|g| grid.inner(g, g)).sum::<f64>();
    }
    acc
}

/// Trapezoidal weights on n samples spaced dt.
pub fn trapezoid_weights(n: usize, dt: f64) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * dt } else { dt }).collect(),
    }
}

pub fn x_norm_parts(grid: &PolarGrid, traj: &Trajectory) -> XNormParts {
    let n = traj.len();
    if n == 0 {
        return XNormParts::default();
    }
    let w = trapezoid_weights(n, traj.dt);
    let ut = time_derivative(&traj.velocity, traj.dt);
    let pt = time_derivative_scalar(&traj.pressure, traj.dt);
    let fft = grid.angular_fft();
    let per_time: Vec<XNormParts> = (0..n)
        .into_par_iter()
        .map(|t| {
            let v = &traj.velocity[t];
            let u_h3 = sobolev_sq(grid, &v[0], 3) + sobolev_sq(grid, &v[1], 3);
            let ut_h1 = sobolev_sq(grid, &ut[t][0], 1) + sobolev_sq(grid, &ut[t][1], 1);
            let p_h2 = sobolev_sq(grid, &traj.pressure[t], 2);
            let pt_l2 = grid.inner(&pt[t], &pt[t]);
            let gut = grid.grad_vec(&ut[t]);
            let off = grid.boundary_offset();
            let mut gb = 0.0;
            for i in 0..2 {
                for k in 0..2 {
                    let tr: Vec<f64> = gut[off..].iter().map(|m| m[i][k]).collect();
                    gb += sobolev_norm_with(fft, &tr, -0.5).powi(2);
                }
            }
            let pb = sobolev_norm_with(fft, &grid.boundary_trace(&pt[t]), -0.5).powi(2);
            XNormParts { u_h3, ut_h1, p_h2, pt_l2, grad_ut_boundary: gb, pt_boundary: pb }
        })
        .collect();
    let mut out = XNormParts::default();
    for (p, wt) in per_time.iter().zip(&w) {
        out.u_h3 += wt * p.u_h3;
        out.ut_h1 += wt * p.ut_h1;
        out.p_h2 += wt * p.p_h2;
        out.pt_l2 += wt * p.pt_l2;
        out.grad_ut_boundary += wt * p.grad_ut_boundary;
        out.pt_boundary += wt * p.pt_boundary;
    }
    out
}

/// Discrete ‖(v, q)‖_{X_T}.
pub fn discrete_x_norm(grid: &PolarGrid, traj: &Trajectory) -> f64 {
    x_norm_parts(grid, traj).total()
}

/// Geometry of the moving boundary η(t)(Γ₀) at one time level.
#[derive(Debug, Clone)]
pub struct DeformedBoundary {
    pub metric: SurfaceMetric,
    /// J = √g/√g₀, the arclength stretch.
    pub stretch: Vec<f64>,
    /// N·Δ_g(x) with x the reference position.
    pub normal_lap_x: Vec<f64>,
}

pub fn deformed_boundary(grid: &PolarGrid, flow: &FlowMap) -> Result<DeformedBoundary> {
    let curve = pushforward_boundary(grid, flow)?;
    let metric = compute_metric(&curve)?;
    let g0 = grid.boundary_metric();
    let stretch = metric.sqrt_g.iter().zip(&g0.sqrt_g).map(|(a, b)| a / b).collect();
    let x = grid.boundary_curve().samples().to_vec();
    let lap = surface_laplacian_vec(&metric, &x)?;
    let normals = &grid.boundary_normals().normals;
    let normal_lap_x = lap.iter().zip(normals).map(|(l, n)| dot2(*l, *n)).collect();
    Ok(DeformedBoundary { metric, stretch, normal_lap_x })
}

/// The forcings of one inner iterate, kept apart so the tangency of ḡ₁ can
/// be audited before they are merged into linear data.
#[derive(Debug, Clone)]
pub struct IterationForcings {
    pub f_bar: Vec<VectorField>,
    pub a_bar: Vec<Vec<f64>>,
    /// Tangential boundary data, one vector per boundary node.
    pub g1: Vec<Vec<[f64; 2]>>,
    pub g2: Vec<Vec<f64>>,
    pub b_bar: Vec<Vec<f64>>,
    /// σ J N·Δ_g(x).
    pub surface: Vec<Vec<f64>>,
}

impl IterationForcings {
    /// max |ḡ₁·N| over nodes and times.
    pub fn tangency_defect(&self, grid: &PolarGrid) -> f64 {
        let normals = &grid.boundary_normals().normals;
        self.g1
            .iter()
            .flat_map(|g| g.iter().zip(normals).map(|(v, n)| dot2(*v, *n).abs()))
            .fold(0.0, f64::max)
    }

    /// Linear data: f = F + f̄, ḡ = νḡ₁ + (ḡ₂ + σJN·Δ_g x)N, B̄ and ā as is.
    pub fn into_linear_data(
        self,
        grid: &PolarGrid,
        params: &PhysicalParams,
        external: &[VectorField],
        u0: &VectorField,
        dt: f64,
    ) -> LinearProblemData {
        let normals = &grid.boundary_normals().normals;
        let f_bar = self
            .f_bar
            .into_iter()
            .zip(external)
            .map(|(mut f, e)| {
                for c in 0..2 {
                    f[c].iter_mut().zip(&e[c]).for_each(|(a, b)| *a += b);
                }
                f
            })
            .collect();
        let g_bar = self
            .g1
            .iter()
            .zip(&self.g2)
            .zip(&self.surface)
            .map(|((g1, g2), s)| {
                (0..normals.len())
                    .map(|j| {
                        let n = normals[j];
                        let k = g2[j] + s[j];
                        [params.nu * g1[j][0] + k * n[0], params.nu * g1[j][1] + k * n[1]]
                    })
                    .collect()
            })
            .collect();
        LinearProblemData { dt, f_bar, g_bar, b_bar: self.b_bar, a_bar: self.a_bar, w0: u0.clone() }
    }
}

struct ForcingsAt {
    f: VectorField,
    a: Vec<f64>,
    g1: Vec<[f64; 2]>,
    g2: Vec<f64>,
    b: Vec<f64>,
    surface: Vec<f64>,
}

fn forcings_at(
    grid: &PolarGrid,
    params: &PhysicalParams,
    v: &VectorField,
    q: &[f64],
    iv: &VectorField,
    flow: &FlowMap,
    geom: &DeformedBoundary,
) -> Result<ForcingsAt> {
    let nu = params.nu;
    let np = grid.npts();
    let a = &flow.a;
    let gv = grid.grad_vec(v);
    let lapv = grid.laplacian_vec(v);
    // (a^j_l a^k_l vⁱ,_k),_j with a aᵀ symmetric.
    let flux: MatrixField = gv.iter().zip(a).map(|(g, am)| mul2(g, &mul2(am, &transpose2(am)))).collect();
    let div_flux = grid.div_rows(&flux);
    let gq = grid.grad(q);
    let mut f = zeros_vec(np);
    let mut abar = vec![0.0; np];
    for p in 0..np {
        let am = &a[p];
        for c in 0..2 {
            let atgq = am[0][c] * gq[0][p] + am[1][c] * gq[1][p];
            f[c][p] = -nu * (lapv[c][p] - div_flux[c][p]) + gq[c][p] - atgq;
        }
        let ga = mul2(&gv[p], am);
        abar[p] = (gv[p][0][0] + gv[p][1][1]) - (ga[0][0] + ga[1][1]);
    }
    let off = grid.boundary_offset();
    let normals = &grid.boundary_normals().normals;
    let m = grid.ntheta;
    let def = def_from_gradient(&gv[off..].to_vec());
    let deta = deformation_from_gradient(&gv[off..].to_vec(), &a[off..].to_vec());
    let mut g1 = vec![[0.0; 2]; m];
    let mut g2 = vec![0.0; m];
    for j in 0..m {
        let n = normals[j];
        let an = matvec2(&transpose2(&a[off + j]), n);
        let s = an[0].hypot(an[1]);
        let ne = [an[0] / s, an[1] / s];
        let w1 = matvec2(&def[j], n);
        let w2 = matvec2(&deta[j], an);
        let w2n = dot2(w2, ne);
        let g = [w1[0] - (w2[0] - w2n * ne[0]), w1[1] - (w2[1] - w2n * ne[1])];
        let gn = dot2(g, n);
        g1[j] = [g[0] - gn * n[0], g[1] - gn * n[1]];
        let qb = q[off + j];
        g2[j] = (nu * dot2(n, w1) - qb) - (nu * dot2(n, w2) - qb * dot2(n, an));
    }
    let tr = grid.boundary_trace_vec(iv);
    let lg = surface_laplacian_vec(&geom.metric, &tr)?;
    let l0 = surface_laplacian_vec(grid.boundary_metric(), &tr)?;
    let b = (0..m)
        .map(|j| {
            let n = normals[j];
            let jj = geom.stretch[j];
            dot2(n, [jj * lg[j][0] - l0[j][0], jj * lg[j][1] - l0[j][1]])
        })
        .collect();
    let surface = (0..m).map(|j| params.sigma * geom.stretch[j] * geom.normal_lap_x[j]).collect();
    Ok(ForcingsAt { f, a: abar, g1, g2, b, surface })
}

/// The difference forcings (f̄, ā, ḡ₁, ḡ₂, B̄) of an inner iterate (v_n, q_n)
/// on the flows of the outer iterate, plus the surface forcing σJN·Δ_g(x).
pub fn compute_iteration_forcings(
    grid: &PolarGrid,
    params: &PhysicalParams,
    iterate: &Trajectory,
    flows: &[FlowMap],
    geometry: &[DeformedBoundary],
) -> Result<IterationForcings> {
    if flows.len() != iterate.len() || geometry.len() != iterate.len() {
        return Err(Error::NodeCountMismatch("iterate and flow trajectories differ in length".into()));
    }
    let iv = time_integral(&iterate.velocity, iterate.dt);
    let per: Vec<ForcingsAt> = (0..iterate.len())
        .into_par_iter()
        .map(|t| {
            forcings_at(grid, params, &iterate.velocity[t], &iterate.pressure[t], &iv[t], &flows[t], &geometry[t])
        })
        .collect::<Result<_>>()?;
    let mut out = IterationForcings {
        f_bar: Vec::with_capacity(per.len()),
        a_bar: Vec::with_capacity(per.len()),
        g1: Vec::with_capacity(per.len()),
        g2: Vec::with_capacity(per.len()),
        b_bar: Vec::with_capacity(per.len()),
        surface: Vec::with_capacity(per.len()),
    };
    for p in per {
        out.f_bar.push(p.f);
        out.a_bar.push(p.a);
        out.g1.push(p.g1);
        out.g2.push(p.g2);
        out.b_bar.push(p.b);
        out.surface.push(p.surface);
    }
    Ok(out)
}

/// Everything Θ_T needs beyond the candidate iterate.
#[derive(Clone)]
pub struct NonlinearProblem {
    pub solver: StokesSolver,
    pub u0: VectorField,
    pub forcing: Option<Arc<Forcing>>,
}

impl std::fmt::Debug for NonlinearProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearProblem")
            .field("m", &self.solver.basis.m)
            .field("params", &self.solver.params)
            .field("forcing", &self.forcing.is_some())
            .finish()
    }
}

impl NonlinearProblem {
    pub fn new(grid: PolarGrid, params: PhysicalParams, m: usize, u0: VectorField) -> Result<Self> {
        if u0[0].len() != grid.npts() || u0[1].len() != grid.npts() {
            return Err(Error::NodeCountMismatch("initial velocity size".into()));
        }
        Ok(NonlinearProblem { solver: StokesSolver::new(grid, m, params)?, u0, forcing: None })
    }

    pub fn with_forcing(mut self, f: Arc<Forcing>) -> Self {
        self.forcing = Some(f);
        self
    }

    pub fn grid(&self) -> &PolarGrid {
        &self.solver.grid
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.solver.params
    }

    /// F = f∘η at every node and time.
    fn external(&self, flows: &[FlowMap]) -> Vec<VectorField> {
        let np = self.grid().npts();
        match &self.forcing {
            None => vec![zeros_vec(np); flows.len()],
            Some(f) => flows
                .iter()
                .map(|fl| {
                    let mut out = zeros_vec(np);
                    for p in 0..np {
                        let v = f(fl.time, [fl.eta[0][p], fl.eta[1][p]]);
                        out[0][p] = v[0];
                        out[1][p] = v[1];
                    }
                    out
                })
                .collect(),
        }
    }
}

/// One inner iterate of Θ_T.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub index: usize,
    pub x_norm: f64,
    /// ‖(δv_n, δq_n)‖_X.
    pub diff_norm: f64,
    pub rel_diff: f64,
    /// diff_n / diff_{n-1}, from n = 2 on.
    pub ratio: Option<f64>,
    /// Worst controls over the time grid.
    pub controls: ControlReport,
    /// max |ḡ₁·N| of the forcings that produced this iterate.
    pub tangency: f64,
}

#[derive(Debug, Clone)]
pub struct ThetaOutcome {
    pub solution: Trajectory,
    pub records: Vec<IterateRecord>,
    pub converged: bool,
    /// Linear data of the last inner solve.
    pub data: LinearProblemData,
    pub controls: ControlReport,
}

/// Worst-case fold of per-time control reports.
pub fn worst_controls(reports: &[ControlReport]) -> ControlReport {
    let mut out = ControlReport {
        max_a_minus_id: 0.0,
        min_alignment: f64::INFINITY,
        min_det_a: f64::INFINITY,
        alignment_ok: true,
        det_ok: true,
    };
    for r in reports {
        out.max_a_minus_id = out.max_a_minus_id.max(r.max_a_minus_id);
        out.min_alignment = out.min_alignment.min(r.min_alignment);
        out.min_det_a = out.min_det_a.min(r.min_det_a);
    }
    out.alignment_ok = out.min_alignment >= CONTROL_THRESHOLD;
    out.det_ok = out.min_det_a >= CONTROL_THRESHOLD;
    out
}

/// Flow maps of `v` with the controls checked at every level.
pub fn controlled_flows(grid: &PolarGrid, v: &Trajectory) -> Result<(Vec<FlowMap>, Vec<ControlReport>)> {
    let flows = flow_trajectory(grid, &v.velocity, v.dt)?;
    let normals = grid.boundary_normals();
    let mut reports = Vec::with_capacity(flows.len());
    for fl in &flows {
        let r = geometric_controls(grid, fl, normals);
        if !r.pass() {
            return Err(Error::HorizonTooLarge(format!(
                "geometric controls fail at t = {:.4} (min det a = {:.3}, min alignment = {:.3}); shrink T",
                fl.time, r.min_det_a, r.min_alignment
            )));
        }
        reports.push(r);
    }
    Ok((flows, reports))
}

fn check_seed(problem: &NonlinearProblem, v: &Trajectory, config: &IterationConfig) -> Result<()> {
    if v.len() != config.nsteps() + 1 {
        return Err(Error::NodeCountMismatch(format!(
            "trajectory has {} samples, expected {}",
            v.len(),
            config.nsteps() + 1
        )));
    }
    if (v.dt - config.dt).abs() > 1e-12 * config.dt {
        return Err(Error::Validation { field: "dt".into(), msg: "trajectory step differs from config".into() });
    }
    let scale = problem.u0[0].iter().chain(&problem.u0[1]).fold(1.0f64, |m, x| m.max(x.abs()));
    let dev = v.velocity[0][0]
        .iter()
        .chain(&v.velocity[0][1])
        .zip(problem.u0[0].iter().chain(&problem.u0[1]))
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if dev > 1e-8 * scale {
        return Err(Error::Validation { field: "v".into(), msg: format!("v(0) differs from u0 by {dev:.3e}") });
    }
    Ok(())
}

/// Θ_T(v, q): build η from v, then iterate the basic linear problem with
/// forcings from the previous inner iterate, starting from (0, 0).
pub fn theta_map(problem: &NonlinearProblem, v: &Trajectory, config: &IterationConfig) -> Result<ThetaOutcome> {
    config.validate()?;
    if config.m != problem.solver.basis.m {
        return Err(Error::Validation { field: "m".into(), msg: "differs from the solver basis size".into() });
    }
    check_seed(problem, v, config)?;
    if let Some(cap) = config.m_cap {
        let norm = discrete_x_norm(problem.grid(), v);
        if norm > cap {
            return Err(Error::OutsideTrustRegion { norm, cap });
        }
    }
    let grid = problem.grid();
    let params = problem.params();
    let (flows, reports) = controlled_flows(grid, v)?;
    let controls = worst_controls(&reports);
    let geometry: Vec<DeformedBoundary> =
        flows.par_iter().map(|f| deformed_boundary(grid, f)).collect::<Result<_>>()?;
    let external = problem.external(&flows);
    let nsteps = config.nsteps();
    let mut current = Trajectory::zeros(grid.npts(), nsteps, config.dt);
    let mut records: Vec<IterateRecord> = Vec::new();
    let mut streak = 0;
    let mut last_data = None;
    let mut converged = false;
    for index in 1..=config.inner_max_iter {
        let forcings = compute_iteration_forcings(grid, params, &current, &flows, &geometry)?;
        let tangency = forcings.tangency_defect(grid);
        let data = forcings.into_linear_data(grid, params, &external, &problem.u0, config.dt);
        let sol = problem.solver.solve(&data)?;
        let pressure = problem.solver.recover_pressure(&sol)?;
        let next = Trajectory {
            dt: config.dt,
            velocity: sol.velocity,
            pressure: pressure.iter().map(|p| p.full()).collect(),
        };
        let x_norm = discrete_x_norm(grid, &next);
        let diff_norm = discrete_x_norm(grid, &next.difference(&current));
        let rel_diff = if x_norm > 0.0 { diff_norm / x_norm } else { diff_norm };
        let ratio = match records.last() {
            Some(prev) if prev.diff_norm > 0.0 => Some(diff_norm / prev.diff_norm),
            _ => None,
        };
        records.push(IterateRecord { index, x_norm, diff_norm, rel_diff, ratio, controls, tangency });
        current = next;
        last_data = Some(data);
        if rel_diff <= config.inner_tol {
            converged = true;
            break;
        }
        match ratio {
            Some(r) if r > 1.0 => {
                streak += 1;
                if streak >= NO_CONTRACTION_STREAK {
                    return Err(Error::NoContraction { streak, ratio: r });
                }
            }
            _ => streak = 0,
        }
    }
    Ok(ThetaOutcome {
        solution: current,
        records,
        converged,
        data: last_data.expect("at least one inner iterate"),
        controls,
    })
}

/// Geometric fit of successive difference norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionSummary {
    /// Fitted ratio ρ; 0 when the iteration hit an exact fixed point.
    pub rho: f64,
    pub contracting: bool,
    /// Differences strictly decrease from the second iterate on.
    pub strictly_decreasing: bool,
    /// Number of difference norms used in the fit.
    pub used: usize,
}

/// Least-squares fit of log diff_n = c + n log ρ.
pub fn contraction_monitor(diffs: &[f64]) -> ContractionSummary {
    let pos: Vec<f64> = diffs.iter().cloned().take_while(|&d| d > 0.0).collect();
    let hit_zero = pos.len() < diffs.len();
    let strictly_decreasing = diffs.windows(2).skip(1).all(|w| w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0));
    if hit_zero && !pos.is_empty() {
        return ContractionSummary { rho: 0.0, contracting: true, strictly_decreasing, used: pos.len() };
    }
    if pos.len() < 2 {
        return ContractionSummary { rho: f64::NAN, contracting: false, strictly_decreasing, used: pos.len() };
    }
    let n = pos.len() as f64;
    let xs: Vec<f64> = (0..pos.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = pos.iter().map(|d| d.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let rho = (sxy / sxx).exp();
    ContractionSummary { rho, contracting: rho < 1.0, strictly_decreasing, used: pos.len() }
}

pub fn contraction_from_records(records: &[IterateRecord]) -> ContractionSummary {
    contraction_monitor(&records.iter().map(|r| r.diff_norm).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub index: usize,
    pub x_norm: f64,
    pub rel_change: f64,
    pub inner_iterations: usize,
    pub inner_rho: f64,
}

/// Converged nonlinear solution with its verification data.
#[derive(Debug, Clone)]
pub struct NonlinearSolution {
    pub solution: Trajectory,
    /// Flow maps of the converged velocity.
    pub flows: Vec<FlowMap>,
    pub outer: Vec<OuterRecord>,
    /// Inner records of the final application of Θ_T.
    pub inner: Vec<IterateRecord>,
    pub contraction: ContractionSummary,
    pub cap: f64,
    /// Largest X-norm seen over the cap.
    pub cap_usage: f64,
    pub controls: ControlReport,
    /// max |ḡ₁·N| over every inner iterate of every outer iterate.
    pub max_tangency: f64,
    /// max |S_η aᵀN − σJΔ_g η| at boundary nodes.
    pub boundary_residual: f64,
    /// max |v_t − ν(a a v,_k),_j + aᵀ∇q − F| over interior nodes.
    pub interior_residual: f64,
    /// Linear data of the last inner solve.
    pub data: LinearProblemData,
}

/// Max-norm residual of the full traction condition S_η(v,q)aᵀN = σJΔ_g(η).
pub fn boundary_condition_residual(
    grid: &PolarGrid,
    params: &PhysicalParams,
    traj: &Trajectory,
    flows: &[FlowMap],
) -> Result<f64> {
    let off = grid.boundary_offset();
    let normals = &grid.boundary_normals().normals;
    let per: Vec<f64> = (0..traj.len())
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let flow = &flows[t];
            let geom = deformed_boundary(grid, flow)?;
            let eta = grid.boundary_trace_vec(&flow.eta);
            let lap = surface_laplacian_vec(&geom.metric, &eta)?;
            let gv = grid.grad_vec(&traj.velocity[t]);
            let deta = deformation_from_gradient(&gv[off..].to_vec(), &flow.a[off..].to_vec());
            let mut worst: f64 = 0.0;
            for j in 0..grid.ntheta {
                let an = matvec2(&transpose2(&flow.a[off + j]), normals[j]);
                let q = traj.pressure[t][off + j];
                let d = matvec2(&deta[j], an);
                let s = [params.nu * d[0] - q * an[0], params.nu * d[1] - q * an[1]];
                let rhs = [params.sigma * geom.stretch[j] * lap[j][0], params.sigma * geom.stretch[j] * lap[j][1]];
                worst = worst.max((s[0] - rhs[0]).hypot(s[1] - rhs[1]));
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().fold(0.0, f64::max))
}

/// Max-norm interior residual of the Lagrangian momentum equation, with v_t
/// by second-order differences.
pub fn interior_residual(
    grid: &PolarGrid,
    params: &PhysicalParams,
    traj: &Trajectory,
    flows: &[FlowMap],
    external: &[VectorField],
) -> f64 {
    let vt = time_derivative(&traj.velocity, traj.dt);
    let off = grid.boundary_offset();
    (0..traj.len())
        .into_par_iter()
        .map(|t| {
            let a = &flows[t].a;
            let gv = grid.grad_vec(&traj.velocity[t]);
            let flux: MatrixField = gv.iter().zip(a).map(|(g, am)| mul2(g, &mul2(am, &transpose2(am)))).collect();
            let visc = grid.div_rows(&flux);
            let gq = grid.grad(&traj.pressure[t]);
            let mut worst: f64 = 0.0;
            for p in 0..off {
                for c in 0..2 {
                    let atgq = a[p][0][c] * gq[0][p] + a[p][1][c] * gq[1][p];
                    let r = vt[t][c][p] - params.nu * visc[c][p] + atgq - external[t][c][p];
                    worst = worst.max(r.abs());
                }
            }
            worst
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// Outer iteration from a given seed with a fixed trust-region radius.
pub fn outer_iteration(
    problem: &NonlinearProblem,
    seed: Trajectory,
    config: &IterationConfig,
    cap: f64,
) -> Result<NonlinearSolution> {
    let grid = problem.grid();
    let gated = IterationConfig { m_cap: Some(cap), ..config.clone() };
    let mut current = seed;
    let mut outer = Vec::new();
    let mut max_tangency: f64 = 0.0;
    let mut cap_usage: f64 = 0.0;
    let mut last: Option<ThetaOutcome> = None;
    let mut converged = false;
    let mut change = f64::INFINITY;
    for index in 1..=config.outer_max_iter {
        cap_usage = cap_usage.max(discrete_x_norm(grid, &current) / cap);
        let out = theta_map(problem, &current, &gated)?;
        max_tangency = out.records.iter().fold(max_tangency, |m, r| m.max(r.tangency));
        let x_norm = discrete_x_norm(grid, &out.solution);
        let diff = discrete_x_norm(grid, &out.solution.difference(&current));
        change = if x_norm > 0.0 { diff / x_norm } else { diff };
        outer.push(OuterRecord {
            index,
            x_norm,
            rel_change: change,
            inner_iterations: out.records.len(),
            inner_rho: contraction_from_records(&out.records).rho,
        });
        current = out.solution.clone();
        last = Some(out);
        if change <= config.inner_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged { iterations: config.outer_max_iter, change });
    }
    let last = last.expect("outer loop ran");
    let (flows, reports) = controlled_flows(grid, &current)?;
    let controls = worst_controls(&reports);
    let params = problem.params();
    let boundary_residual = boundary_condition_residual(grid, params, &current, &flows)?;
    let external = problem.external(&flows);
    let interior = interior_residual(grid, params, &current, &flows, &external);
    Ok(NonlinearSolution {
        contraction: contraction_from_records(&last.records),
        solution: current,
        flows,
        outer,
        inner: last.records,
        cap,
        cap_usage,
        controls,
        max_tangency,
        boundary_residual,
        interior_residual: interior,
        data: last.data,
    })
}

/// Trust-region radius: the configured M_cap, or ten times the larger of
/// the seed norm and the norm of its image under Θ_T.
pub fn default_cap(problem: &NonlinearProblem, seed: &Trajectory, config: &IterationConfig) -> Result<f64> {
    if let Some(c) = config.m_cap {
        return Ok(c);
    }
    let ungated = IterationConfig { m_cap: None, ..config.clone() };
    let image = theta_map(problem, seed, &ungated)?;
    let grid = problem.grid();
    let base = discrete_x_norm(grid, seed).max(discrete_x_norm(grid, &image.solution));
    Ok(if base > 0.0 { 10.0 * base } else { 1.0 })
}

fn check_horizon(config: &IterationConfig) -> Result<()> {
    config.validate()?;
    if config.t_final > config.t_max {
        return Err(Error::HorizonTooLarge(format!(
            "T = {} exceeds the trust horizon {}",
            config.t_final, config.t_max
        )));
    }
    Ok(())
}

/// Fixed point of Θ_T from the seed (u₀ constant in time, q = 0).
pub fn solve_nonlinear(problem: &NonlinearProblem, config: &IterationConfig) -> Result<NonlinearSolution> {
    check_horizon(config)?;
    let seed = Trajectory::constant(&problem.u0, config.nsteps(), config.dt);
    let cap = default_cap(problem, &seed, config)?;
    outer_iteration(problem, seed, config, cap)
}

#[derive(Debug, Clone)]
pub struct UniquenessReport {
    pub scale: f64,
    /// ‖baseline − perturbed‖_X / ‖baseline‖_X.
    pub distance: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub baseline_iterations: usize,
    pub perturbed_iterations: usize,
}

/// A random divergence-free field of unit L² norm from the solver basis.
pub fn random_div_free(problem: &NonlinearProblem, seed: u64) -> VectorField {
    let basis = &problem.solver.basis;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..basis.m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c: Vec<f64> = c.iter().map(|x| x / norm).collect();
    basis.combine(&c)
}

/// Rerun the outer iteration from seed + scale·(t/T)·ψ with ψ a random
/// divergence-free field, under the baseline trust region, and compare.
pub fn uniqueness_probe(
    problem: &NonlinearProblem,
    config: &IterationConfig,
    scale: f64,
    rng_seed: u64,
) -> Result<UniquenessReport> {
    check_horizon(config)?;
    let nsteps = config.nsteps();
    let seed = Trajectory::constant(&problem.u0, nsteps, config.dt);
    let cap = default_cap(problem, &seed, config)?;
    let baseline = outer_iteration(problem, seed.clone(), config, cap)?;
    let psi = random_div_free(problem, rng_seed);
    let mut perturbed = seed;
    for (n, v) in perturbed.velocity.iter_mut().enumerate() {
        let s = scale * (n as f64 / nsteps as f64);
        for c in 0..2 {
            v[c].iter_mut().zip(&psi[c]).for_each(|(a, b)| *a += s * b);
        }
    }
    let other = outer_iteration(problem, perturbed, config, cap)?;
    let grid = problem.grid();
    let base = discrete_x_norm(grid, &baseline.solution);
    let diff = discrete_x_norm(grid, &other.solution.difference(&baseline.solution));
    let distance = if base > 0.0 { diff / base } else { diff };
    let tolerance = 10.0 * config.inner_tol;
    Ok(UniquenessReport {
        scale,
        distance,
        tolerance,
        pass: distance <= tolerance,
        baseline_iterations: baseline.outer.len(),
        perturbed_iterations: other.outer.len(),
    })
}
