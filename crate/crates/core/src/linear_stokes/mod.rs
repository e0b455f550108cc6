//! The linear Stokes-type problem on Ω₀ with the surface-tension boundary
//! term: divergence removal, divergence-free Galerkin solve and pressure
//! recovery.
//!
//! Strong form, for the unknowns (w̄, p):
//! w̄_t − νΔw̄ = −∇p + f̄, div w̄ = ā,
//! ν Def w̄ N − pN = σ(N·Δ₀∫₀ᵗw̄ + B̄)N + ḡ on Γ₀, w̄(0) = w̄₀.

mod basis;
mod divergence;
mod galerkin;
mod pressure;

pub use basis::{
    build_basis, build_basis_seeded, max_exact_degree, zernike_modes, zernike_modes_to_degree, zernike_radial,
    DivFreeBasis, TestField, ZernikeMode, PIVOT_TOL,
};
pub use divergence::{
    boundary_traction, divergence_removal, modify_data, time_derivative, time_derivative_scalar, time_integral, DivergenceRemoval,
    EllipticSolver,
};
pub use galerkin::{
    assemble, bending_matrix, compatibility_check, def_gram, solve_linear_problem, step_ode, CompatibilityReport, GalerkinMatrices,
    GalerkinState, LinearSolution, OdeStepper, StokesSolver, COMPATIBILITY_TOL,
};
pub use pressure::{recover_pressure, weak_residual, PressureField, PressureSpace};

use crate::error::{Error, Result};
use crate::field::{zeros_vec, VectorField};
use crate::lagrangian::PolarGrid;

/// Viscosity ν and surface tension σ, both positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub nu: f64,
    pub sigma: f64,
}

impl PhysicalParams {
    pub fn new(nu: f64, sigma: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Validation { field: "nu".into(), msg: "must be positive".into() });
        }
        if !(sigma > 0.0) {
            return Err(Error::Validation { field: "sigma".into(), msg: "must be positive".into() });
        }
        Ok(PhysicalParams { nu, sigma })
    }
}

/// Data (f̄, ḡ, B̄, ā, w̄₀) sampled at t_n = n·dt, n = 0..=nsteps.
#[derive(Debug, Clone)]
pub struct LinearProblemData {
    pub dt: f64,
    pub f_bar: Vec<VectorField>,
    /// Boundary vector data, one entry per boundary node.
    pub g_bar: Vec<Vec<[f64; 2]>>,
    pub b_bar: Vec<Vec<f64>>,
    pub a_bar: Vec<Vec<f64>>,
    pub w0: VectorField,
}

impl LinearProblemData {
    pub fn zeros(grid: &PolarGrid, nsteps: usize, dt: f64) -> Self {
        let n = nsteps + 1;
        LinearProblemData {
            dt,
            f_bar: vec![zeros_vec(grid.npts()); n],
            g_bar: vec![vec![[0.0; 2]; grid.ntheta]; n],
            b_bar: vec![vec![0.0; grid.ntheta]; n],
            a_bar: vec![vec![0.0; grid.npts()]; n],
            w0: zeros_vec(grid.npts()),
        }
    }

    /// Number of time samples.
    pub fn len(&self) -> usize {
        self.f_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_bar.is_empty()
    }

    pub fn nsteps(&self) -> usize {
        self.len() - 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| n as f64 * self.dt).collect()
    }

    /// Largest violation of B̄(0) = 0, ā(0) = 0 and ḡ(0)_tan = 0.
    pub fn initial_defect(&self, grid: &PolarGrid) -> f64 {
        let b = self.b_bar[0].iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let a = self.a_bar[0].iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let normals = grid.boundary_normals();
        let g = self.g_bar[0]
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let t = normals.tangential(j, *v);
                t[0].hypot(t[1])
            })
            .fold(0.0f64, f64::max);
        b.max(a).max(g)
    }
}
