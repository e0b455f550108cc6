//! Divergence-free velocity basis from perp-gradients of polynomial stream
//! functions, orthonormalized in L².

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{axpy, MatrixField, VectorField};
use crate::geometry::bending_test_weights;
use crate::lagrangian::{def_from_gradient, PolarGrid};

/// Relative Gram-Schmidt pivot below which the basis is declared degenerate.
pub const PIVOT_TOL: f64 = 1e-8;

/// Zernike radial polynomial R_n^k as coefficients of r^0..r^n.
pub fn zernike_radial(n: usize, k: usize) -> Vec<f64> {
    assert!(k <= n && (n - k).is_multiple_of(2));
    let fact = |x: usize| (1..=x).map(|v| v as f64).product::<f64>();
    let mut c = vec![0.0; n + 1];
    for s in 0..=(n - k) / 2 {
        let sign = if s.is_multiple_of(2) { 1.0 } else { -1.0 };
        c[n - 2 * s] = sign * fact(n - s) / (fact(s) * fact((n + k) / 2 - s) * fact((n - k) / 2 - s));
    }
    c
}

/// Polynomial on the reference disk ξ = E⁻¹x in Zernike form
/// R_n^k(r)·cos(kθ) (`sine == false`) or R_n^k(r)·sin(kθ).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZernikeMode {
    pub n: usize,
    pub k: usize,
    pub sine: bool,
}

impl ZernikeMode {
    pub fn sample(&self, grid: &PolarGrid) -> Vec<f64> {
        let c = zernike_radial(self.n, self.k);
        let mut out = Vec::with_capacity(grid.npts());
        for i in 0..grid.nr {
            let r = grid.r[i];
            let rad: f64 = c.iter().rev().fold(0.0, |acc, &ci| acc * r + ci);
            for j in 0..grid.ntheta {
                let ang = self.k as f64 * grid.theta[j];
                out.push(rad * if self.sine { ang.sin() } else { ang.cos() });
            }
        }
        out
    }
}

/// Zernike modes of degree 1..=max ordered by degree, then by k, cosine
/// before sine. Constants are excluded; `include_constant` adds R_0^0 first.
pub fn zernike_modes(count: usize, include_constant: bool) -> Vec<ZernikeMode> {
    let mut out = Vec::new();
    if include_constant {
        out.push(ZernikeMode { n: 0, k: 0, sine: false });
    }
    let mut n = 1;
    while out.len() < count {
        let mut k = n % 2;
        while k <= n && out.len() < count {
            out.push(ZernikeMode { n, k, sine: false });
            if k > 0 && out.len() < count {
                out.push(ZernikeMode { n, k, sine: true });
            }
            k += 2;
        }
        n += 1;
    }
    out
}

/// All Zernike modes of degree at most `degree`, constant included.
pub fn zernike_modes_to_degree(degree: usize) -> Vec<ZernikeMode> {
    zernike_modes((degree + 1) * (degree + 2) / 2, true)
}

/// A velocity field with everything the Galerkin forms need precomputed.
#[derive(Debug, Clone)]
pub struct TestField {
    pub field: VectorField,
    pub grad: MatrixField,
    pub def: MatrixField,
    /// Values at the boundary nodes.
    pub trace: Vec<[f64; 2]>,
    /// ∂_y of the boundary trace.
    pub trace_dy: Vec<[f64; 2]>,
    /// g⁻¹√g ∂_y(N (N·φ)) at the boundary nodes.
    pub bend: Vec<[f64; 2]>,
}

impl TestField {
    pub fn new(grid: &PolarGrid, field: VectorField) -> Self {
        let grad = grid.grad_vec(&field);
        let def = def_from_gradient(&grad);
        let trace = grid.boundary_trace_vec(&field);
        let fft = grid.angular_fft();
        let t0: Vec<f64> = trace.iter().map(|p| p[0]).collect();
        let t1: Vec<f64> = trace.iter().map(|p| p[1]).collect();
        let d0 = fft.deriv(&t0, 1);
        let d1 = fft.deriv(&t1, 1);
        let trace_dy = d0.into_iter().zip(d1).map(|(a, b)| [a, b]).collect();
        let bend = bending_test_weights(grid.boundary_metric(), grid.boundary_normals(), &trace);
        TestField { field, grad, def, trace, trace_dy, bend }
    }

    /// ∫_Γ ∂_y u^i g⁻¹ ∂_y(N·φ Nⁱ) dS with u = `trial` and φ = self.
    pub fn bending_with(&self, trial: &TestField) -> f64 {
        let h = 2.0 * std::f64::consts::PI / self.bend.len() as f64;
        trial
            .trace_dy
            .iter()
            .zip(&self.bend)
            .map(|(du, b)| du[0] * b[0] + du[1] * b[1])
            .sum::<f64>()
            * h
    }
}

/// Orthonormal divergence-free basis ψ_k = (∂₂ψ̂_k, −∂₁ψ̂_k).
#[derive(Debug, Clone)]
pub struct DivFreeBasis {
    pub m: usize,
    /// Stream functions of the orthonormalized fields.
    pub stream: Vec<Vec<f64>>,
    pub fields: Vec<TestField>,
    /// Highest polynomial degree among the stream functions.
    pub max_degree: usize,
}

impl DivFreeBasis {
    /// Σ c_k ψ_k.
    pub fn combine(&self, c: &[f64]) -> VectorField {
        let n = self.fields[0].field[0].len();
        let mut out = [vec![0.0; n], vec![0.0; n]];
        for (ck, f) in c.iter().zip(&self.fields) {
            axpy(*ck, &f.field[0], &mut out[0]);
            axpy(*ck, &f.field[1], &mut out[1]);
        }
        out
    }

    /// L² projection coefficients (u, ψ_k).
    pub fn project(&self, grid: &PolarGrid, u: &VectorField) -> Vec<f64> {
        self.fields.iter().map(|f| grid.inner_vec(u, &f.field)).collect()
    }
}

/// Largest polynomial degree the grid differentiates exactly.
pub fn max_exact_degree(grid: &PolarGrid) -> usize {
    (grid.nr - 1).min(grid.ntheta / 2 - 1)
}

pub fn build_basis(grid: &PolarGrid, m: usize) -> Result<DivFreeBasis> {
    build_basis_seeded(grid, m, None)
}

/// As [`build_basis`], optionally mixing the candidate stream functions by a
/// seeded random matrix before orthonormalization. The span is unchanged.
pub fn build_basis_seeded(grid: &PolarGrid, m: usize, seed: Option<u64>) -> Result<DivFreeBasis> {
    if m == 0 || m > grid.nr * grid.ntheta / 4 {
        return Err(Error::NodeCountMismatch(format!(
            "mode count {m} outside 1..={} for a {}x{} grid",
            grid.nr * grid.ntheta / 4,
            grid.nr,
            grid.ntheta
        )));
    }
    let modes = zernike_modes(m, false);
    let max_degree = modes.iter().map(|z| z.n).max().unwrap_or(1);
    if max_degree > max_exact_degree(grid) {
        return Err(Error::NodeCountMismatch(format!(
            "stream functions of degree {max_degree} are not resolved on a {}x{} grid",
            grid.nr, grid.ntheta
        )));
    }
    let mut stream: Vec<Vec<f64>> = modes.iter().map(|z| z.sample(grid)).collect();
    if let Some(s) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mix: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 } + rng.gen_range(-0.5..0.5)).collect())
            .collect();
        stream = mix
            .iter()
            .map(|row| {
                let mut s = vec![0.0; grid.npts()];
                for (c, f) in row.iter().zip(&stream) {
                    axpy(*c, f, &mut s);
                }
                s
            })
            .collect();
    }
    let mut fields: Vec<VectorField> = stream
        .iter()
        .map(|s| {
            let g = grid.grad(s);
            [g[1].clone(), g[0].iter().map(|v| -v).collect()]
        })
        .collect();
    // Modified Gram-Schmidt, two passes for stability.
    for k in 0..m {
        let before = grid.norm_vec(&fields[k]);
        for _ in 0..2 {
            for j in 0..k {
                let c = grid.inner_vec(&fields[k], &fields[j]);
                let (head, tail) = fields.split_at_mut(k);
                axpy(-c, &head[j][0], &mut tail[0][0]);
                axpy(-c, &head[j][1], &mut tail[0][1]);
                let (sh, st) = stream.split_at_mut(k);
                axpy(-c, &sh[j], &mut st[0]);
            }
        }
        let nrm = grid.norm_vec(&fields[k]);
        if !(nrm > PIVOT_TOL * before) {
            return Err(Error::BasisDegenerate { pivot: nrm / before, mode: k });
        }
        for c in 0..2 {
            fields[k][c].iter_mut().for_each(|v| *v /= nrm);
        }
        stream[k].iter_mut().for_each(|v| *v /= nrm);
    }
    let fields = fields.into_iter().map(|f| TestField::new(grid, f)).collect();
    Ok(DivFreeBasis { m, stream, fields, max_degree })
}
