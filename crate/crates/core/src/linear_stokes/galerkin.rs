//! Galerkin matrices, the implicit trapezoidal stepper for
//! d'' + (ν/2)G d' + σH d = F, and the full linear solve.

use std::f64::consts::PI;
use std::fmt::Write;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::field::{frob2, VectorField};
use crate::lagrangian::PolarGrid;

use super::basis::{build_basis, DivFreeBasis, TestField};
use super::divergence::{boundary_traction, modify_data, EllipticSolver};
use super::pressure::{PressureField, PressureSpace};
use super::{LinearProblemData, PhysicalParams};

/// Tolerance of the compatibility condition on the initial velocity.
pub const COMPATIBILITY_TOL: f64 = 1e-8;

/// G_jk = (Def ψ_j, Def ψ_k); `h[(k, j)]` is the boundary form with trial ψ_j
/// and test ψ_k, so the system reads d'' + (ν/2)G d' + σ h d = F.
#[derive(Debug, Clone)]
pub struct GalerkinMatrices {
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Load vectors at the data time samples; empty means zero load.
    pub f: Vec<DVector<f64>>,
    pub dt: f64,
}

impl GalerkinMatrices {
    pub fn m(&self) -> usize {
        self.g.nrows()
    }

    /// Load at time t, linear between samples.
    pub fn load_at(&self, t: f64) -> DVector<f64> {
        if self.f.is_empty() {
            return DVector::zeros(self.m());
        }
        let s = (t / self.dt).max(0.0);
        let n = (s.floor() as usize).min(self.f.len() - 1);
        let frac = s - n as f64;
        if n + 1 >= self.f.len() || frac.abs() < 1e-9 {
            return self.f[n].clone();
        }
        if (1.0 - frac).abs() < 1e-9 {
            return self.f[n + 1].clone();
        }
        &self.f[n] * (1.0 - frac) + &self.f[n + 1] * frac
    }
}

/// Velocity coefficients λ and their running integral d.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinState {
    pub lambda: DVector<f64>,
    pub d: DVector<f64>,
    pub time: f64,
}

impl GalerkinState {
    pub fn zeros(m: usize) -> Self {
        GalerkinState { lambda: DVector::zeros(m), d: DVector::zeros(m), time: 0.0 }
    }
}

/// The Def-Def Gram matrix.
pub fn def_gram(grid: &PolarGrid, fields: &[TestField]) -> DMatrix<f64> {
    let m = fields.len();
    let mut g = DMatrix::zeros(m, m);
    for j in 0..m {
        for k in j..m {
            let s: f64 = fields[j]
                .def
                .iter()
                .zip(&fields[k].def)
                .zip(&grid.weights)
                .map(|((a, b), w)| frob2(a, b) * w)
                .sum();
            g[(j, k)] = s;
            g[(k, j)] = s;
        }
    }
    g
}

/// Boundary form matrix, test index first.
pub fn bending_matrix(tests: &[TestField], trials: &[TestField]) -> DMatrix<f64> {
    DMatrix::from_fn(tests.len(), trials.len(), |k, j| tests[k].bending_with(&trials[j]))
}

/// (f, φ) + ∫_Γ (g + σ B N)·φ dS for one time sample.
pub fn load_functional(
    grid: &PolarGrid,
    params: &PhysicalParams,
    f: &VectorField,
    g: &[[f64; 2]],
    b: &[f64],
    test: &TestField,
) -> f64 {
    let interior = grid.inner_vec(f, &test.field);
    let metric = grid.boundary_metric();
    let normals = grid.boundary_normals();
    let h = 2.0 * PI / grid.ntheta as f64;
    let bdry: f64 = (0..grid.ntheta)
        .map(|j| {
            let n = normals.normals[j];
            let tr = [g[j][0] + params.sigma * b[j] * n[0], g[j][1] + params.sigma * b[j] * n[1]];
            (tr[0] * test.trace[j][0] + tr[1] * test.trace[j][1]) * metric.sqrt_g[j]
        })
        .sum::<f64>()
        * h;
    interior + bdry
}

/// Assemble G, H and the load F(t_n) for divergence-free data.
pub fn assemble(
    grid: &PolarGrid,
    basis: &DivFreeBasis,
    params: &PhysicalParams,
    data: &LinearProblemData,
) -> GalerkinMatrices {
    let g = def_gram(grid, &basis.fields);
    let h = bending_matrix(&basis.fields, &basis.fields);
    let f = loads(grid, basis, params, data);
    GalerkinMatrices { g, h, f, dt: data.dt }
}

fn loads(grid: &PolarGrid, basis: &DivFreeBasis, params: &PhysicalParams, data: &LinearProblemData) -> Vec<DVector<f64>> {
    (0..data.len())
        .map(|t| {
            DVector::from_iterator(
                basis.m,
                basis
                    .fields
                    .iter()
                    .map(|psi| load_functional(grid, params, &data.f_bar[t], &data.g_bar[t], &data.b_bar[t], psi)),
            )
        })
        .collect()
}

/// Implicit trapezoidal stepper with the d-update eliminated:
/// (I + dtν/4 G + dt²σ/4 H) λ⁺ = (I − dtν/4 G − dt²σ/4 H) λ − dtσH d + dt/2 (F + F⁺),
/// d⁺ = d + dt/2 (λ + λ⁺).
#[derive(Debug, Clone)]
pub struct OdeStepper {
    lhs: LU<f64, Dyn, Dyn>,
    rhs: DMatrix<f64>,
    sh: DMatrix<f64>,
    pub dt: f64,
}

impl OdeStepper {
    pub fn new(g: &DMatrix<f64>, h: &DMatrix<f64>, params: &PhysicalParams, dt: f64) -> Result<Self> {
        let m = g.nrows();
        let id = DMatrix::<f64>::identity(m, m);
        let k = g * (dt * params.nu / 4.0) + h * (dt * dt * params.sigma / 4.0);
        let a = &id + &k;
        let scale = a.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        let lu = a.lu();
        let u = lu.u();
        if (0..m).any(|i| !(u[(i, i)].abs() > 1e-12 * scale)) {
            return Err(Error::SingularStepMatrix { dt });
        }
        Ok(OdeStepper { lhs: lu, rhs: &id - &k, sh: h * params.sigma, dt })
    }

    pub fn step(&self, s: &GalerkinState, f_now: &DVector<f64>, f_next: &DVector<f64>) -> Result<GalerkinState> {
        let dt = self.dt;
        let b = &self.rhs * &s.lambda - (&self.sh * &s.d) * dt + (f_now + f_next) * (0.5 * dt);
        let lambda = self.lhs.solve(&b).ok_or(Error::SingularStepMatrix { dt })?;
        if lambda.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularStepMatrix { dt });
        }
        let d = &s.d + (&s.lambda + &lambda) * (0.5 * dt);
        Ok(GalerkinState { lambda, d, time: s.time + dt })
    }
}

/// One trapezoidal step of the Galerkin system.
pub fn step_ode(
    state: &GalerkinState,
    matrices: &GalerkinMatrices,
    params: &PhysicalParams,
    dt: f64,
) -> Result<GalerkinState> {
    assert!(dt > 0.0);
    let stepper = OdeStepper::new(&matrices.g, &matrices.h, params, dt)?;
    stepper.step(state, &matrices.load_at(state.time), &matrices.load_at(state.time + dt))
}

/// Report of the compatibility condition [ν Def w₀ N − g₀]_tan = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompatibilityReport {
    pub max_defect: f64,
    pub pass: bool,
}

pub fn compatibility_check(
    grid: &PolarGrid,
    w0: &VectorField,
    g0: &[[f64; 2]],
    params: &PhysicalParams,
) -> CompatibilityReport {
    let trac = boundary_traction(grid, w0);
    let normals = grid.boundary_normals();
    let max_defect = (0..grid.ntheta)
        .map(|j| {
            let v = [params.nu * trac[j][0] - g0[j][0], params.nu * trac[j][1] - g0[j][1]];
            let t = normals.tangential(j, v);
            t[0].hypot(t[1])
        })
        .fold(0.0f64, f64::max);
    CompatibilityReport { max_defect, pass: max_defect <= COMPATIBILITY_TOL }
}

/// Trajectory of one linear solve.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub dt: f64,
    pub lambda: Vec<DVector<f64>>,
    pub d: Vec<DVector<f64>>,
    /// λ' from the Galerkin system at each sample.
    pub lambda_dot: Vec<DVector<f64>>,
    /// Divergence-free part w = Σ λ_k ψ_k.
    pub div_free: Vec<VectorField>,
    /// Divergence-removal field v = ∇r.
    pub correction: Vec<VectorField>,
    /// w̄ = w + v.
    pub velocity: Vec<VectorField>,
    /// Boundary means of ā removed before each boundary solve.
    pub boundary_means: Vec<f64>,
    /// Divergence-free data actually fed to the Galerkin system.
    pub modified: LinearProblemData,
}

impl LinearSolution {
    pub fn times(&self) -> Vec<f64> {
        (0..self.lambda.len()).map(|n| n as f64 * self.dt).collect()
    }

    /// Modal trajectory, one row per (time, mode): `t,k,lambda_k,d_k`.
    pub fn modes_csv(&self) -> String {
        let mut s = String::from("t,k,lambda_k,d_k\n");
        for (n, (l, d)) in self.lambda.iter().zip(&self.d).enumerate() {
            let t = n as f64 * self.dt;
            for k in 0..l.len() {
                let _ = writeln!(s, "{t:.12e},{k},{:.12e},{:.12e}", l[k], d[k]);
            }
        }
        s
    }
}

/// Reusable solver: grid, basis, factorized operators and pressure space.
#[derive(Debug, Clone)]
pub struct StokesSolver {
    pub grid: PolarGrid,
    pub basis: DivFreeBasis,
    pub params: PhysicalParams,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    elliptic: EllipticSolver,
    pressure: PressureSpace,
}

impl StokesSolver {
    pub fn new(grid: PolarGrid, m: usize, params: PhysicalParams) -> Result<Self> {
        let basis = build_basis(&grid, m)?;
        Self::with_basis(grid, basis, params)
    }

    pub fn with_basis(grid: PolarGrid, basis: DivFreeBasis, params: PhysicalParams) -> Result<Self> {
        let g = def_gram(&grid, &basis.fields);
        let h = bending_matrix(&basis.fields, &basis.fields);
        let elliptic = EllipticSolver::new(&grid)?;
        let pressure = PressureSpace::new(&grid, &basis, basis.max_degree.max(2))?;
        Ok(StokesSolver { grid, basis, params, g, h, elliptic, pressure })
    }

    pub fn elliptic(&self) -> &EllipticSolver {
        &self.elliptic
    }

    pub fn pressure_space(&self) -> &PressureSpace {
        &self.pressure
    }

    pub fn matrices(&self, data: &LinearProblemData) -> GalerkinMatrices {
        GalerkinMatrices {
            g: self.g.clone(),
            h: self.h.clone(),
            f: loads(&self.grid, &self.basis, &self.params, data),
            dt: data.dt,
        }
    }

    /// λ' = F − (ν/2)Gλ − σHd.
    pub fn lambda_dot(&self, f: &DVector<f64>, lambda: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        f - (&self.g * lambda) * (0.5 * self.params.nu) - (&self.h * d) * self.params.sigma
    }

    pub fn solve(&self, data: &LinearProblemData) -> Result<LinearSolution> {
        let grid = &self.grid;
        let comp = compatibility_check(grid, &data.w0, &data.g_bar[0], &self.params);
        if !comp.pass {
            return Err(Error::CompatibilityViolation { defect: comp.max_defect, tol: COMPATIBILITY_TOL });
        }
        let mut correction = Vec::with_capacity(data.len());
        let mut boundary_means = Vec::with_capacity(data.len());
        for a in &data.a_bar {
            let dr = self.elliptic.solve(grid, a)?;
            correction.push(dr.v);
            boundary_means.push(dr.boundary_mean);
        }
        let modified = modify_data(grid, data, &correction, &self.params)?;
        let f = loads(grid, &self.basis, &self.params, &modified);
        let stepper = OdeStepper::new(&self.g, &self.h, &self.params, data.dt)?;
        let w0 = crate::field::sub_vec(&data.w0, &correction[0]);
        let mut state = GalerkinState {
            lambda: DVector::from_vec(self.basis.project(grid, &w0)),
            d: DVector::zeros(self.basis.m),
            time: 0.0,
        };
        let n = data.len();
        let mut lambda = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut lambda_dot = Vec::with_capacity(n);
        lambda.push(state.lambda.clone());
        d.push(state.d.clone());
        lambda_dot.push(self.lambda_dot(&f[0], &state.lambda, &state.d));
        for t in 0..n - 1 {
            state = stepper.step(&state, &f[t], &f[t + 1])?;
            lambda_dot.push(self.lambda_dot(&f[t + 1], &state.lambda, &state.d));
            lambda.push(state.lambda.clone());
            d.push(state.d.clone());
        }
        let div_free: Vec<VectorField> = lambda.iter().map(|l| self.basis.combine(l.as_slice())).collect();
        let velocity = div_free
            .iter()
            .zip(&correction)
            .map(|(w, v)| crate::field::add_vec(w, v))
            .collect();
        Ok(LinearSolution { dt: data.dt, lambda, d, lambda_dot, div_free, correction, velocity, boundary_means, modified })
    }

    pub fn recover_pressure(&self, sol: &LinearSolution) -> Result<Vec<PressureField>> {
        self.pressure.recover(&self.grid, &self.basis, &self.params, sol)
    }
}

/// One-shot linear solve on a fresh basis of `m` modes.
pub fn solve_linear_problem(
    data: &LinearProblemData,
    m: usize,
    grid: &PolarGrid,
    params: &PhysicalParams,
) -> Result<LinearSolution> {
    StokesSolver::new(grid.clone(), m, *params)?.solve(data)
}
