//! Geometry of a closed boundary curve sampled at equispaced parameter
//! nodes: induced metric, surface Laplacian, normals, curvature and
//! Fourier-multiplier Sobolev norms.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{periodic_nodes, Periodic};

/// Smallest admissible |dη/dy| before a curve counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Closed curve η|Γ₀ sampled at M equispaced nodes y_j = 2πj/M.
#[derive(Debug, Clone)]
pub struct BoundaryCurve {
    samples: Vec<[f64; 2]>,
    coeffs: [Vec<Complex64>; 2],
    fft: Periodic,
}

impl BoundaryCurve {
    pub fn new(samples: Vec<[f64; 2]>) -> Result<Self> {
        let m = samples.len();
        if m < 8 || !m.is_multiple_of(2) {
            return Err(Error::NodeCountMismatch(format!(
                "closed curve needs an even node count >= 8, got {m}"
            )));
        }
        let fft = Periodic::new(m);
        let xs: Vec<f64> = samples.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = samples.iter().map(|p| p[1]).collect();
        let coeffs = [fft.coeffs(&xs), fft.coeffs(&ys)];
        let curve = BoundaryCurve { samples, coeffs, fft };
        let min_speed = curve
            .derivative(1)
            .iter()
            .map(|d| d[0].hypot(d[1]))
            .fold(f64::INFINITY, f64::min);
        if !(min_speed >= DEGENERACY_TOL) {
            return Err(Error::DegenerateCurve { min_speed });
        }
        Ok(curve)
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> [f64; 2]) -> Result<Self> {
        Self::new(periodic_nodes(m).into_iter().map(f).collect())
    }

    pub fn circle(m: usize, radius: f64) -> Result<Self> {
        Self::from_fn(m, |y| [radius * y.cos(), radius * y.sin()])
    }

    /// Ellipse with semi-axes `a` (along x) and `b`, angle-parametrized.
    pub fn ellipse(m: usize, a: f64, b: f64) -> Result<Self> {
        Self::from_fn(m, |y| [a * y.cos(), b * y.sin()])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[[f64; 2]] {
        &self.samples
    }

    pub fn coeffs(&self) -> &[Vec<Complex64>; 2] {
        &self.coeffs
    }

    pub fn fft(&self) -> &Periodic {
        &self.fft
    }

    /// Spectral derivative of the embedding with respect to y.
    pub fn derivative(&self, order: u32) -> Vec<[f64; 2]> {
        let xs: Vec<f64> = self.samples.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = self.samples.iter().map(|p| p[1]).collect();
        let dx = self.fft.deriv(&xs, order);
        let dy = self.fft.deriv(&ys, order);
        dx.into_iter().zip(dy).map(|(a, b)| [a, b]).collect()
    }

    /// Twice the signed enclosed area; positive for counterclockwise curves.
    pub fn signed_area2(&self) -> f64 {
        let d = self.derivative(1);
        let h = 2.0 * PI / self.len() as f64;
        self.samples
            .iter()
            .zip(&d)
            .map(|(p, dp)| p[0] * dp[1] - p[1] * dp[0])
            .sum::<f64>()
            * h
    }
}

/// Induced metric of a curve: the single component g = |∂_yη|², its
/// inverse, the Christoffel symbol and the arclength element.
#[derive(Debug, Clone)]
pub struct SurfaceMetric {
    pub g: Vec<f64>,
    pub g_inv: Vec<f64>,
    pub christoffel: Vec<f64>,
    pub sqrt_g: Vec<f64>,
    fft: Periodic,
}

impl SurfaceMetric {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn fft(&self) -> &Periodic {
        &self.fft
    }

    /// ∫ f dS by the trapezoidal rule.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        let h = 2.0 * PI / self.len() as f64;
        f.iter().zip(&self.sqrt_g).map(|(a, s)| a * s).sum::<f64>() * h
    }
}

/// Outward unit normals and unit tangents at the curve nodes.
#[derive(Debug, Clone)]
pub struct NormalField {
    pub normals: Vec<[f64; 2]>,
    pub tangents: Vec<[f64; 2]>,
    pub counterclockwise: bool,
}

impl NormalField {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// Tangential part (Id − N⊗N) v at node j.
    pub fn tangential(&self, j: usize, v: [f64; 2]) -> [f64; 2] {
        let n = self.normals[j];
        let vn = v[0] * n[0] + v[1] * n[1];
        [v[0] - vn * n[0], v[1] - vn * n[1]]
    }
}

pub fn compute_metric(curve: &BoundaryCurve) -> Result<SurfaceMetric> {
    let d = curve.derivative(1);
    let g: Vec<f64> = d.iter().map(|v| v[0] * v[0] + v[1] * v[1]).collect();
    let min_speed = g.iter().cloned().fold(f64::INFINITY, f64::min).sqrt();
    if !(min_speed >= DEGENERACY_TOL) {
        return Err(Error::DegenerateCurve { min_speed });
    }
    let fft = curve.fft().clone();
    let dg = fft.deriv(&g, 1);
    let g_inv: Vec<f64> = g.iter().map(|x| 1.0 / x).collect();
    let christoffel = dg.iter().zip(&g_inv).map(|(a, b)| 0.5 * a * b).collect();
    let sqrt_g = g.iter().map(|x| x.sqrt()).collect();
    Ok(SurfaceMetric { g, g_inv, christoffel, sqrt_g, fft })
}

/// Δ_g f = g⁻¹(f_yy − Γ f_y) for a scalar boundary field.
pub fn surface_laplacian(metric: &SurfaceMetric, field: &[f64]) -> Result<Vec<f64>> {
    if field.len() != metric.len() {
        return Err(Error::NodeCountMismatch(format!(
            "field has {} nodes, metric has {}",
            field.len(),
            metric.len()
        )));
    }
    let f1 = metric.fft.deriv(field, 1);
    let f2 = metric.fft.deriv(field, 2);
    Ok((0..field.len())
        .map(|j| metric.g_inv[j] * (f2[j] - metric.christoffel[j] * f1[j]))
        .collect())
}

/// Component-wise surface Laplacian of a vector boundary field.
pub fn surface_laplacian_vec(metric: &SurfaceMetric, field: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let (a, b) = split(field);
    let la = surface_laplacian(metric, &a)?;
    let lb = surface_laplacian(metric, &b)?;
    Ok(la.into_iter().zip(lb).map(|(x, y)| [x, y]).collect())
}

pub fn outward_normal(curve: &BoundaryCurve) -> Result<NormalField> {
    let d = curve.derivative(1);
    let min_speed = d.iter().map(|v| v[0].hypot(v[1])).fold(f64::INFINITY, f64::min);
    if !(min_speed >= DEGENERACY_TOL) {
        return Err(Error::DegenerateCurve { min_speed });
    }
    let ccw = curve.signed_area2() > 0.0;
    let tangents: Vec<[f64; 2]> = d
        .iter()
        .map(|v| {
            let s = v[0].hypot(v[1]);
            [v[0] / s, v[1] / s]
        })
        .collect();
    let normals = tangents
        .iter()
        .map(|t| if ccw { [t[1], -t[0]] } else { [-t[1], t[0]] })
        .collect();
    Ok(NormalField { normals, tangents, counterclockwise: ccw })
}

/// N·Δ_g η, the scalar the normal stress condition needs. Equals −κ.
pub fn normal_curvature_forcing(
    curve: &BoundaryCurve,
    metric: &SurfaceMetric,
    normals: &NormalField,
) -> Result<Vec<f64>> {
    if metric.len() != curve.len() || normals.len() != curve.len() {
        return Err(Error::NodeCountMismatch(format!(
            "curve {}, metric {}, normals {}",
            curve.len(),
            metric.len(),
            normals.len()
        )));
    }
    let lap = surface_laplacian_vec(metric, curve.samples())?;
    Ok(lap
        .iter()
        .zip(&normals.normals)
        .map(|(l, n)| l[0] * n[0] + l[1] * n[1])
        .collect())
}

/// Signed curvature κ = −N·Δ_gη with respect to the outward normal.
pub fn mean_curvature(curve: &BoundaryCurve) -> Result<Vec<f64>> {
    let metric = compute_metric(curve)?;
    let normals = outward_normal(curve)?;
    Ok(normal_curvature_forcing(curve, &metric, &normals)?
        .into_iter()
        .map(|x| -x)
        .collect())
}

/// (2π Σ_k (1+k²)^s |f̂_k|²)^{1/2}; at s = 0 this is the trapezoidal L² norm
/// with respect to dy. Meant for s in [−2, 2].
pub fn boundary_sobolev_norm(field: &[f64], s: f64) -> f64 {
    debug_assert!((-2.0..=2.0).contains(&s));
    if field.is_empty() {
        return 0.0;
    }
    let fft = Periodic::new(field.len());
    sobolev_norm_with(&fft, field, s)
}

/// Same as [`boundary_sobolev_norm`] with a prebuilt FFT plan.
pub fn sobolev_norm_with(fft: &Periodic, field: &[f64], s: f64) -> f64 {
    let c = fft.coeffs(field);
    let sum: f64 = c
        .iter()
        .enumerate()
        .map(|(j, cj)| {
            let k = fft.wavenumber(j) as f64;
            (1.0 + k * k).powf(s) * cj.norm_sqr()
        })
        .sum();
    (2.0 * PI * sum).sqrt()
}

/// Perimeter ∫√g dy.
pub fn surface_area(curve: &BoundaryCurve) -> Result<f64> {
    let metric = compute_metric(curve)?;
    Ok(metric.integrate(&vec![1.0; curve.len()]))
}

/// The boundary bilinear form ∫ ∂_y u^i g⁻¹ ∂_y(N^j v^j N^i) dS, which by
/// integration by parts equals −∫ (N·Δ_g u)(N·v) dS on a closed curve.
pub fn normal_bending_form(
    metric: &SurfaceMetric,
    normals: &NormalField,
    u: &[[f64; 2]],
    v: &[[f64; 2]],
) -> Result<f64> {
    let m = metric.len();
    if u.len() != m || v.len() != m || normals.len() != m {
        return Err(Error::NodeCountMismatch("bending form inputs".into()));
    }
    let t = bending_test_weights(metric, normals, v);
    let (u0, u1) = split(u);
    let du0 = metric.fft.deriv(&u0, 1);
    let du1 = metric.fft.deriv(&u1, 1);
    let h = 2.0 * PI / m as f64;
    Ok((0..m).map(|j| du0[j] * t[j][0] + du1[j] * t[j][1]).sum::<f64>() * h)
}

/// Per-node vector g⁻¹ √g ∂_y(N (N·v)); contracting it with ∂_y u and
/// summing with weight 2π/M gives [`normal_bending_form`].
pub fn bending_test_weights(metric: &SurfaceMetric, normals: &NormalField, v: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let m = metric.len();
    let nv: Vec<f64> = (0..m)
        .map(|j| normals.normals[j][0] * v[j][0] + normals.normals[j][1] * v[j][1])
        .collect();
    let a: Vec<f64> = (0..m).map(|j| normals.normals[j][0] * nv[j]).collect();
    let b: Vec<f64> = (0..m).map(|j| normals.normals[j][1] * nv[j]).collect();
    let da = metric.fft.deriv(&a, 1);
    let db = metric.fft.deriv(&b, 1);
    (0..m)
        .map(|j| {
            let w = metric.g_inv[j] * metric.sqrt_g[j];
            [w * da[j], w * db[j]]
        })
        .collect()
}

pub(crate) fn split(v: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    (v.iter().map(|p| p[0]).collect(), v.iter().map(|p| p[1]).collect())
}
