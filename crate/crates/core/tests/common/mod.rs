//! Oracles shared by the integration tests. None of them call into the
//! solver's own differentiation or quadrature.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

/// Legendre polynomials P_0..=P_n at x.
fn legendre(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![1.0, x];
    for k in 1..n {
        let kf = k as f64;
        p.push(((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0));
    }
    p.truncate(n + 1);
    p
}

/// Least-squares fit of point samples by Σ c_ab P_a(x/s)P_b(y/s), a + b ≤ degree.
#[derive(Debug, Clone)]
pub struct PolyFit {
    degree: usize,
    scale: f64,
    coeffs: DVector<f64>,
}

impl PolyFit {
    pub fn new(points: &[[f64; 2]], values: &[f64], degree: usize) -> Self {
        let scale = points.iter().map(|p| p[0].abs().max(p[1].abs())).fold(0.0, f64::max);
        let rows: Vec<Vec<f64>> = points.iter().map(|p| Self::row(degree, scale, *p)).collect();
        let a = DMatrix::from_fn(points.len(), rows[0].len(), |i, j| rows[i][j]);
        let b = DVector::from_column_slice(values);
        let coeffs = a.svd(true, true).solve(&b, 1e-14).expect("least squares");
        PolyFit { degree, scale, coeffs }
    }

    fn row(degree: usize, scale: f64, p: [f64; 2]) -> Vec<f64> {
        let px = legendre(degree, p[0] / scale);
        let py = legendre(degree, p[1] / scale);
        let mut r = Vec::new();
        for a in 0..=degree {
            for b in 0..=degree - a {
                r.push(px[a] * py[b]);
            }
        }
        r
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        Self::row(self.degree, self.scale, p).iter().zip(self.coeffs.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Fourth-order central difference of f along `dir` at p.
pub fn fd_first(f: impl Fn([f64; 2]) -> f64, p: [f64; 2], dir: usize, h: f64) -> f64 {
    let at = |s: f64| {
        let mut q = p;
        q[dir] += s * h;
        f(q)
    };
    (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h)
}

/// Fourth-order central second difference of f along `dir` at p.
pub fn fd_second(f: impl Fn([f64; 2]) -> f64, p: [f64; 2], dir: usize, h: f64) -> f64 {
    let at = |s: f64| {
        let mut q = p;
        q[dir] += s * h;
        f(q)
    };
    (-at(-2.0) + 16.0 * at(-1.0) - 30.0 * at(0.0) + 16.0 * at(1.0) - at(2.0)) / (12.0 * h * h)
}

/// Exact curvature −N·Δ_gη of the ellipse (a cos φ, b sin φ).
pub fn ellipse_curvature(a: f64, b: f64, phi: f64) -> f64 {
    a * b / ((a * phi.sin()).powi(2) + (b * phi.cos()).powi(2)).powf(1.5)
}

/// Solution of d'' + 2γd' + k d = 0, d(0) = d0, d'(0) = 0, for k > γ².
pub fn damped_oscillator(gamma: f64, k: f64, d0: f64, t: f64) -> (f64, f64) {
    let w = (k - gamma * gamma).sqrt();
    let e = (-gamma * t).exp();
    let d = d0 * e * ((w * t).cos() + gamma / w * (w * t).sin());
    let v = -d0 * e * (k / w) * (w * t).sin();
    (d, v)
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}
