//! Low-level spectral tools: periodic FFT differentiation, Gauss-Radau
//! nodes and barycentric differentiation matrices.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// FFT-based operations on real periodic samples at `n` equispaced nodes
/// of [0, 2π).
#[derive(Clone)]
pub struct Periodic {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Periodic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Periodic({})", self.n)
    }
}

impl Periodic {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Periodic {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Signed wavenumber of FFT slot `j`. The Nyquist slot reports +n/2.
    pub fn wavenumber(&self, j: usize) -> i64 {
        let n = self.n as i64;
        let j = j as i64;
        if j <= n / 2 {
            j
        } else {
            j - n
        }
    }

    /// Coefficients c_k with f(y_j) = Σ c_k e^{i k y_j}.
    pub fn coeffs(&self, f: &[f64]) -> Vec<Complex64> {
        assert_eq!(f.len(), self.n);
        let mut buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fwd.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|c| *c *= s);
        buf
    }

    pub fn synthesize(&self, c: &[Complex64]) -> Vec<f64> {
        assert_eq!(c.len(), self.n);
        let mut buf = c.to_vec();
        self.inv.process(&mut buf);
        buf.iter().map(|z| z.re).collect()
    }

    /// Derivative of the given order. The Nyquist mode is dropped for every
    /// order so that the second derivative equals the first applied twice.
    pub fn deriv(&self, f: &[f64], order: u32) -> Vec<f64> {
        if order == 0 {
            return f.to_vec();
        }
        let mut c = self.coeffs(f);
        let n = self.n;
        for (j, cj) in c.iter_mut().enumerate() {
            if n.is_multiple_of(2) && j == n / 2 {
                *cj = Complex64::new(0.0, 0.0);
                continue;
            }
            let ik = Complex64::new(0.0, self.wavenumber(j) as f64);
            *cj *= ik.powu(order);
        }
        self.synthesize(&c)
    }

    /// Dense first-derivative matrix, row-major, consistent with [`Self::deriv`].
    pub fn deriv_matrix(&self, order: u32) -> Vec<f64> {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for k in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[k] = 1.0;
            let col = self.deriv(&e, order);
            for i in 0..n {
                m[i * n + k] = col[i];
            }
        }
        m
    }
}

/// Equispaced parameter nodes y_j = 2πj/n.
pub fn periodic_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect()
}

/// Legendre P_n(x) and P_{n-1}(x) by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// Gauss-Radau nodes and weights on [-1, 1] with the fixed node at +1,
/// sorted ascending. Exact for polynomials of degree 2n-2.
pub fn gauss_radau_right(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let nf = n as f64;
    // Left-anchored rule first: nodes are -1 and the roots of P_{n-1} + P_n.
    let mut nodes = vec![-1.0];
    let mut weights = vec![2.0 / (nf * nf)];
    for k in 1..n {
        let mut x = -(2.0 * PI * k as f64 / (2.0 * nf - 1.0)).cos();
        for _ in 0..100 {
            let (pn, pn1) = legendre_pair(n, x);
            let f = pn + pn1;
            // (1 - x^2) P_k' = k (P_{k-1} - x P_k)
            let (pm1, pm2) = legendre_pair(n - 1, x);
            let dpn = nf * (pn1 - x * pn) / (1.0 - x * x);
            let dpn1 = (nf - 1.0) * (pm2 - x * pm1) / (1.0 - x * x);
            let dx = f / (dpn + dpn1);
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, pn1) = legendre_pair(n, x);
        nodes.push(x);
        weights.push((1.0 - x) / (nf * nf * pn1 * pn1));
    }
    let mut pairs: Vec<(f64, f64)> = nodes.iter().zip(&weights).map(|(&x, &w)| (-x, w)).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Row-major differentiation matrix of the polynomial interpolant through
/// `x`, built from barycentric weights.
pub fn barycentric_diff_matrix(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut lam = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                lam[j] /= x[j] - x[k];
            }
        }
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (lam[j] / lam[i]) / (x[i] - x[j]);
                d[i * n + j] = v;
                diag -= v;
            }
        }
        d[i * n + i] = diag;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radau_integrates_polynomials_exactly() {
        let (x, w) = gauss_radau_right(8);
        assert!((x[7] - 1.0).abs() < 1e-15);
        for p in 0..=14 {
            let s: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(p)).sum();
            let exact = if p % 2 == 0 { 2.0 / (p as f64 + 1.0) } else { 0.0 };
            assert!((s - exact).abs() < 1e-13, "degree {p}: {s} vs {exact}");
        }
    }

    #[test]
    fn barycentric_derivative_exact_on_cubic() {
        let (x, _) = gauss_radau_right(6);
        let d = barycentric_diff_matrix(&x);
        let f: Vec<f64> = x.iter().map(|&t| t.powi(3) - 2.0 * t).collect();
        for i in 0..6 {
            let df: f64 = (0..6).map(|j| d[i * 6 + j] * f[j]).sum();
            assert!((df - (3.0 * x[i] * x[i] - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_derivative_of_trig() {
        let p = Periodic::new(16);
        let y = periodic_nodes(16);
        let f: Vec<f64> = y.iter().map(|&t| (3.0 * t).sin()).collect();
        let d2 = p.deriv(&f, 2);
        for (j, &t) in y.iter().enumerate() {
            assert!((d2[j] + 9.0 * (3.0 * t).sin()).abs() < 1e-12);
        }
    }
}
