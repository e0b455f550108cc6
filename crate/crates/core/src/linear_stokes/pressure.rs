//! Pressure as the multiplier of the divergence constraint: find p with
//! (p, div φ) = Λ(φ) for gradient test fields φ = ∇(|x|² q), where Λ is the
//! residual of the weak momentum equation.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::field::{axpy, frob2};
use crate::lagrangian::PolarGrid;

use super::basis::{max_exact_degree, zernike_modes_to_degree, DivFreeBasis, TestField};
use super::galerkin::{load_functional, LinearSolution};
use super::PhysicalParams;

/// Pressure at one time level split into a mean-zero field and its mean.
#[derive(Debug, Clone)]
pub struct PressureField {
    /// Mean-zero part.
    pub p: Vec<f64>,
    /// Mean over Ω₀; fixed by the normal stress condition.
    pub mean: f64,
}

impl PressureField {
    pub fn full(&self) -> Vec<f64> {
        self.p.iter().map(|x| x + self.mean).collect()
    }
}

/// Polynomial pressure space with its gradient test fields.
#[derive(Debug, Clone)]
pub struct PressureSpace {
    pub degree: usize,
    pub modes: Vec<Vec<f64>>,
    pub tests: Vec<TestField>,
    lu: LU<f64, Dyn, Dyn>,
    mass: DMatrix<f64>,
    gdef: DMatrix<f64>,
    bend: DMatrix<f64>,
}

impl PressureSpace {
    pub fn new(grid: &PolarGrid, basis: &DivFreeBasis, degree: usize) -> Result<Self> {
        let degree = degree.min(max_exact_degree(grid).saturating_sub(2));
        let modes: Vec<Vec<f64>> = zernike_modes_to_degree(degree).iter().map(|z| z.sample(grid)).collect();
        let r2: Vec<f64> = grid.points.iter().map(|p| p[0] * p[0] + p[1] * p[1]).collect();
        let tests: Vec<TestField> = modes
            .iter()
            .map(|q| {
                let chi: Vec<f64> = q.iter().zip(&r2).map(|(a, b)| a * b).collect();
                TestField::new(grid, grid.grad(&chi))
            })
            .collect();
        let nq = modes.len();
        let divs: Vec<Vec<f64>> = tests.iter().map(|t| grid.div(&t.field)).collect();
        let a = DMatrix::from_fn(nq, nq, |l, i| grid.inner(&modes[i], &divs[l]));
        let lu = a.lu();
        let u = lu.u();
        let scale = u.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        if (0..nq).any(|i| !(u[(i, i)].abs() > 1e-12 * scale)) {
            return Err(Error::SolverFailure("pressure system is singular".into()));
        }
        let m = basis.m;
        let mass = DMatrix::from_fn(nq, m, |l, k| grid.inner_vec(&basis.fields[k].field, &tests[l].field));
        let gdef = DMatrix::from_fn(nq, m, |l, k| {
            basis.fields[k]
                .def
                .iter()
                .zip(&tests[l].def)
                .zip(&grid.weights)
                .map(|((a, b), w)| frob2(a, b) * w)
                .sum()
        });
        let bend = DMatrix::from_fn(nq, m, |l, k| tests[l].bending_with(&basis.fields[k]));
        Ok(PressureSpace { degree, modes, tests, lu, mass, gdef, bend })
    }

    pub fn recover(
        &self,
        grid: &PolarGrid,
        basis: &DivFreeBasis,
        params: &PhysicalParams,
        sol: &LinearSolution,
    ) -> Result<Vec<PressureField>> {
        let _ = basis;
        let data = &sol.modified;
        (0..sol.lambda.len())
            .map(|n| {
                let load = DVector::from_iterator(
                    self.tests.len(),
                    self.tests
                        .iter()
                        .map(|t| load_functional(grid, params, &data.f_bar[n], &data.g_bar[n], &data.b_bar[n], t)),
                );
                let lam = &self.mass * &sol.lambda_dot[n] + (&self.gdef * &sol.lambda[n]) * (0.5 * params.nu)
                    + (&self.bend * &sol.d[n]) * params.sigma
                    - load;
                let c = self.lu.solve(&lam).ok_or_else(|| Error::SolverFailure("pressure solve".into()))?;
                let mut p = vec![0.0; grid.npts()];
                for (ci, q) in c.iter().zip(&self.modes) {
                    axpy(*ci, q, &mut p);
                }
                let mean = grid.mean(&p);
                p.iter_mut().for_each(|x| *x -= mean);
                Ok(PressureField { p, mean })
            })
            .collect()
    }
}

/// Weak momentum residual Λ(φ) of a linear solution at sample `n`:
/// (w', φ) + (ν/2)(Def w, Def φ) + σ∫∂_y(∫w)ⁱ g⁻¹ ∂_y(N·φ Nⁱ) dS − (f, φ) − ⟨g + σBN, φ⟩.
pub fn weak_residual(
    grid: &PolarGrid,
    basis: &DivFreeBasis,
    params: &PhysicalParams,
    sol: &LinearSolution,
    n: usize,
    test: &TestField,
) -> f64 {
    let data = &sol.modified;
    let wdot = basis.combine(sol.lambda_dot[n].as_slice());
    let mut acc = grid.inner_vec(&wdot, &test.field);
    for (k, psi) in basis.fields.iter().enumerate() {
        let dd: f64 = psi
            .def
            .iter()
            .zip(&test.def)
            .zip(&grid.weights)
            .map(|((a, b), w)| frob2(a, b) * w)
            .sum();
        acc += 0.5 * params.nu * sol.lambda[n][k] * dd;
        acc += params.sigma * sol.d[n][k] * test.bending_with(psi);
    }
    acc - load_functional(grid, params, &data.f_bar[n], &data.g_bar[n], &data.b_bar[n], test)
}

/// Pressure trajectory for a linear solution.
pub fn recover_pressure(
    solver: &super::StokesSolver,
    sol: &LinearSolution,
) -> Result<Vec<PressureField>> {
    solver.recover_pressure(sol)
}
