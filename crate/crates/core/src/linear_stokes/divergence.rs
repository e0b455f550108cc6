//! Divergence removal: v = ∇r with Δr = ā in Ω₀, r = r₀ on Γ₀ and
//! Δ₀r₀ = ā on Γ₀, followed by the matching modification of the data.
//! Components of ā beyond the polynomial degree the grid resolves are
//! dropped by the interior solve.

use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::error::{Error, Result};
use crate::field::{axpy, zeros_vec, VectorField};
use crate::geometry::surface_laplacian;
use crate::lagrangian::{def_from_gradient, PolarGrid};

use super::basis::{max_exact_degree, zernike_modes_to_degree};
use super::{LinearProblemData, PhysicalParams};

/// Factorized operators for the two elliptic problems. The interior problem
/// is solved in the space of polynomials of degree D, the largest the grid
/// differentiates exactly: Δr matches the degree D−2 projection of ā and the
/// boundary trace matches the trigonometric coefficients of r₀ up to order D.
/// Point collocation on the polar grid is avoided because the singular
/// harmonics r^{-k}cos kθ make it nearly singular.
#[derive(Debug, Clone)]
pub struct EllipticSolver {
    interior: LU<f64, Dyn, Dyn>,
    boundary: LU<f64, Dyn, Dyn>,
    /// Zernike modes of degree ≤ D sampled on the grid.
    trial: Vec<Vec<f64>>,
    /// Modes of degree ≤ D−2 with their squared norms.
    test: Vec<Vec<f64>>,
    test_norms: Vec<f64>,
    degree: usize,
    npts: usize,
    ntheta: usize,
    offset: usize,
}

/// Output of [`divergence_removal`].
#[derive(Debug, Clone)]
pub struct DivergenceRemoval {
    pub v: VectorField,
    pub r: Vec<f64>,
    /// Arclength mean of ā on Γ₀, removed before the boundary solve.
    pub boundary_mean: f64,
}

/// Real trigonometric coefficients (a₀, a₁, b₁, …, a_D, b_D) of boundary data.
fn trig_coeffs(grid: &PolarGrid, f: &[f64], degree: usize) -> Vec<f64> {
    let c = grid.angular_fft().coeffs(f);
    let mut out = Vec::with_capacity(2 * degree + 1);
    out.push(c[0].re);
    for k in 1..=degree {
        out.push(2.0 * c[k].re);
        out.push(-2.0 * c[k].im);
    }
    out
}

impl EllipticSolver {
    pub fn new(grid: &PolarGrid) -> Result<Self> {
        let n = grid.npts();
        let off = grid.boundary_offset();
        let degree = max_exact_degree(grid);
        if degree < 2 {
            return Err(Error::NodeCountMismatch("grid too coarse for the Poisson solve".into()));
        }
        let trial: Vec<Vec<f64>> = zernike_modes_to_degree(degree).iter().map(|z| z.sample(grid)).collect();
        let test: Vec<Vec<f64>> = zernike_modes_to_degree(degree - 2).iter().map(|z| z.sample(grid)).collect();
        let test_norms: Vec<f64> = test.iter().map(|z| grid.inner(z, z)).collect();
        let nt = trial.len();
        let ns = test.len();
        let mut a = DMatrix::<f64>::zeros(nt, nt);
        for (k, z) in trial.iter().enumerate() {
            let lap = grid.laplacian(z);
            for (s, q) in test.iter().enumerate() {
                a[(s, k)] = grid.inner(q, &lap) / test_norms[s];
            }
            for (s, c) in trig_coeffs(grid, &grid.boundary_trace(z), degree).into_iter().enumerate() {
                a[(ns + s, k)] = c;
            }
        }
        let interior = a.lu();
        if !is_invertible(&interior) {
            return Err(Error::SolverFailure("interior Poisson operator is singular".into()));
        }
        // Bordered surface Laplacian. The spectral operator annihilates the
        // constant and the Nyquist mode, so both get a multiplier: c = √g
        // fixes the mean, q = (-1)^j removes the sawtooth.
        let m = grid.ntheta;
        let metric = grid.boundary_metric();
        let mut b = DMatrix::<f64>::zeros(m + 2, m + 2);
        let mut e = vec![0.0; m];
        for k in 0..m {
            e[k] = 1.0;
            let col = surface_laplacian(metric, &e)?;
            e[k] = 0.0;
            for i in 0..m {
                b[(i, k)] = col[i];
            }
            b[(k, m)] = metric.sqrt_g[k];
            b[(m, k)] = metric.sqrt_g[k];
            let q = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
            b[(k, m + 1)] = q;
            b[(m + 1, k)] = q;
        }
        let boundary = b.lu();
        if !is_invertible(&boundary) {
            return Err(Error::SolverFailure("surface Laplacian system is singular".into()));
        }
        Ok(EllipticSolver { interior, boundary, trial, test, test_norms, degree, npts: n, ntheta: m, offset: off })
    }

    pub fn solve(&self, grid: &PolarGrid, a_bar: &[f64]) -> Result<DivergenceRemoval> {
        if a_bar.len() != self.npts {
            return Err(Error::NodeCountMismatch("divergence defect size".into()));
        }
        if a_bar.iter().all(|&x| x == 0.0) {
            return Ok(DivergenceRemoval { v: zeros_vec(self.npts), r: vec![0.0; self.npts], boundary_mean: 0.0 });
        }
        let m = self.ntheta;
        let metric = grid.boundary_metric();
        let trace = &a_bar[self.offset..];
        let mean = metric.integrate(trace) / metric.integrate(&vec![1.0; m]);
        let mut rhs = DVector::<f64>::zeros(m + 2);
        for j in 0..m {
            rhs[j] = trace[j] - mean;
        }
        let r0 = self
            .boundary
            .solve(&rhs)
            .ok_or_else(|| Error::SolverFailure("boundary solve failed".into()))?;
        let r0: Vec<f64> = r0.iter().take(m).cloned().collect();
        let ns = self.test.len();
        let mut rhs = DVector::<f64>::zeros(self.trial.len());
        for (s, q) in self.test.iter().enumerate() {
            rhs[s] = grid.inner(q, a_bar) / self.test_norms[s];
        }
        for (s, c) in trig_coeffs(grid, &r0, self.degree).into_iter().enumerate() {
            rhs[ns + s] = c;
        }
        let c = self
            .interior
            .solve(&rhs)
            .ok_or_else(|| Error::SolverFailure("interior solve failed".into()))?;
        let mut r = vec![0.0; self.npts];
        for (ck, z) in c.iter().zip(&self.trial) {
            axpy(*ck, z, &mut r);
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::SolverFailure("non-finite potential".into()));
        }
        let v = grid.grad(&r);
        Ok(DivergenceRemoval { v, r, boundary_mean: mean })
    }
}

fn is_invertible(lu: &LU<f64, Dyn, Dyn>) -> bool {
    let u = lu.u();
    let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (0..u.nrows()).all(|i| u[(i, i)].abs() > 1e-13 * scale)
}

/// One-shot divergence removal; builds and factorizes the operators.
pub fn divergence_removal(grid: &PolarGrid, a_bar: &[f64]) -> Result<DivergenceRemoval> {
    EllipticSolver::new(grid)?.solve(grid, a_bar)
}

/// Time derivative of sampled fields: centered inside, second-order
/// one-sided at the ends.
pub fn time_derivative(samples: &[VectorField], dt: f64) -> Vec<VectorField> {
    let n = samples.len();
    let np = samples[0][0].len();
    let mut out = vec![zeros_vec(np); n];
    if n < 2 {
        return out;
    }
    for (t, o) in out.iter_mut().enumerate() {
        for c in 0..2 {
            for p in 0..np {
                o[c][p] = if n == 2 {
                    (samples[1][c][p] - samples[0][c][p]) / dt
                } else if t == 0 {
                    (-3.0 * samples[0][c][p] + 4.0 * samples[1][c][p] - samples[2][c][p]) / (2.0 * dt)
                } else if t == n - 1 {
                    (3.0 * samples[n - 1][c][p] - 4.0 * samples[n - 2][c][p] + samples[n - 3][c][p]) / (2.0 * dt)
                } else {
                    (samples[t + 1][c][p] - samples[t - 1][c][p]) / (2.0 * dt)
                };
            }
        }
    }
    out
}

/// Scalar counterpart of [`time_derivative`].
pub fn time_derivative_scalar(samples: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let n = samples.len();
    let np = samples.first().map_or(0, |s| s.len());
    let mut out = vec![vec![0.0; np]; n];
    if n < 2 {
        return out;
    }
    for (t, o) in out.iter_mut().enumerate() {
        for p in 0..np {
            o[p] = if n == 2 {
                (samples[1][p] - samples[0][p]) / dt
            } else if t == 0 {
                (-3.0 * samples[0][p] + 4.0 * samples[1][p] - samples[2][p]) / (2.0 * dt)
            } else if t == n - 1 {
                (3.0 * samples[n - 1][p] - 4.0 * samples[n - 2][p] + samples[n - 3][p]) / (2.0 * dt)
            } else {
                (samples[t + 1][p] - samples[t - 1][p]) / (2.0 * dt)
            };
        }
    }
    out
}

/// Cumulative trapezoidal integral ∫₀ᵗ of sampled fields.
pub fn time_integral(samples: &[VectorField], dt: f64) -> Vec<VectorField> {
    let np = samples[0][0].len();
    let mut acc = zeros_vec(np);
    let mut out = Vec::with_capacity(samples.len());
    out.push(acc.clone());
    for w in samples.windows(2) {
        for c in 0..2 {
            for p in 0..np {
                acc[c][p] += 0.5 * dt * (w[0][c][p] + w[1][c][p]);
            }
        }
        out.push(acc.clone());
    }
    out
}

/// (Def v N) at the boundary nodes.
pub fn boundary_traction(grid: &PolarGrid, v: &VectorField) -> Vec<[f64; 2]> {
    let def = def_from_gradient(&grid.grad_vec(v));
    let off = grid.boundary_offset();
    grid.boundary_normals()
        .normals
        .iter()
        .enumerate()
        .map(|(j, n)| {
            let d = &def[off + j];
            [d[0][0] * n[0] + d[0][1] * n[1], d[1][0] * n[0] + d[1][1] * n[1]]
        })
        .collect()
}

/// Data of the divergence-free problem for w = w̄ − v:
/// f = f̄ − v_t + νΔv, g = ḡ − [ν Def v N]_tan,
/// B = B̄ + N·Δ₀∫₀ᵗv − ν(Def v N)·N, w₀ unchanged, ā replaced by zero.
pub fn modify_data(
    grid: &PolarGrid,
    data: &LinearProblemData,
    v: &[VectorField],
    params: &PhysicalParams,
) -> Result<LinearProblemData> {
    if v.len() != data.len() {
        return Err(Error::NodeCountMismatch("correction and data lengths differ".into()));
    }
    let np = grid.npts();
    let mut out = data.clone();
    out.a_bar = vec![vec![0.0; np]; data.len()];
    if v.iter().all(|f| f[0].iter().chain(&f[1]).all(|&x| x == 0.0)) {
        return Ok(out);
    }
    let nu = params.nu;
    let vt = time_derivative(v, data.dt);
    let vint = time_integral(v, data.dt);
    let metric = grid.boundary_metric();
    let normals = grid.boundary_normals();
    let off = grid.boundary_offset();
    for t in 0..data.len() {
        let lap = grid.laplacian_vec(&v[t]);
        for c in 0..2 {
            for p in 0..np {
                out.f_bar[t][c][p] = data.f_bar[t][c][p] - vt[t][c][p] + nu * lap[c][p];
            }
        }
        let trac = boundary_traction(grid, &v[t]);
        let tr0: Vec<f64> = vint[t][0][off..].to_vec();
        let tr1: Vec<f64> = vint[t][1][off..].to_vec();
        let l0 = surface_laplacian(metric, &tr0)?;
        let l1 = surface_laplacian(metric, &tr1)?;
        for j in 0..grid.ntheta {
            let n = normals.normals[j];
            let tan = normals.tangential(j, trac[j]);
            out.g_bar[t][j][0] = data.g_bar[t][j][0] - nu * tan[0];
            out.g_bar[t][j][1] = data.g_bar[t][j][1] - nu * tan[1];
            let ndl = n[0] * l0[j] + n[1] * l1[j];
            let ntn = trac[j][0] * n[0] + trac[j][1] * n[1];
            out.b_bar[t][j] = data.b_bar[t][j] + ndl - nu * ntn;
        }
    }
    Ok(out)
}
