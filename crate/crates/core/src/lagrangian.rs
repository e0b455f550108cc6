//! Lagrangian kinematics on a polar grid: the flow map η, its inverse
//! gradient a = (∇η)⁻¹, deformation and stress tensors, and the runtime
//! geometric controls that every later estimate assumes.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{det2, dot2, inv2, matvec2, mul2, transpose2, MatrixField, VectorField, IDENTITY};
use crate::geometry::{compute_metric, outward_normal, BoundaryCurve, NormalField, SurfaceMetric};
use crate::spectral::{barycentric_diff_matrix, gauss_radau_right, periodic_nodes, Periodic};

/// Tensor-product grid on the reference domain Ω₀ = E(unit disk) for a
/// constant matrix E (the identity for the disk). Radial nodes are
/// Gauss-Radau points on (0, 1] so the outer ring is the boundary Γ₀;
/// angular nodes are equispaced. Node (i, j) is stored at i·ntheta + j.
#[derive(Debug, Clone)]
pub struct PolarGrid {
    pub nr: usize,
    pub ntheta: usize,
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    /// Area quadrature weights in physical coordinates.
    pub weights: Vec<f64>,
    /// Node positions x = E ξ.
    pub points: Vec<[f64; 2]>,
    pub map: [[f64; 2]; 2],
    pub map_inv: [[f64; 2]; 2],
    dr: Vec<f64>,
    fft: Periodic,
    cos: Vec<f64>,
    sin: Vec<f64>,
    curve: BoundaryCurve,
    metric: SurfaceMetric,
    normals: NormalField,
}

impl PolarGrid {
    /// Grid on the unit disk.
    pub fn new(nr: usize, ntheta: usize) -> Result<Self> {
        Self::with_map(nr, ntheta, IDENTITY)
    }

    /// Grid on E(unit disk). E must have positive determinant.
    pub fn with_map(nr: usize, ntheta: usize, map: [[f64; 2]; 2]) -> Result<Self> {
        if nr < 2 {
            return Err(Error::NodeCountMismatch(format!("nr must be >= 2, got {nr}")));
        }
        if ntheta < 8 || !ntheta.is_multiple_of(2) {
            return Err(Error::NodeCountMismatch(format!(
                "ntheta must be even and >= 8, got {ntheta}"
            )));
        }
        let jac = det2(&map);
        if !(jac > 0.0) {
            return Err(Error::InvertibilityLost { det: jac, time: 0.0 });
        }
        let (x, w) = gauss_radau_right(nr);
        let r: Vec<f64> = x.iter().map(|t| 0.5 * (1.0 + t)).collect();
        // d/dr = 2 d/dx
        let dr = barycentric_diff_matrix(&x).into_iter().map(|v| 2.0 * v).collect();
        let theta = periodic_nodes(ntheta);
        let cos: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
        let sin: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
        let dtheta = 2.0 * PI / ntheta as f64;
        let mut weights = Vec::with_capacity(nr * ntheta);
        let mut points = Vec::with_capacity(nr * ntheta);
        for i in 0..nr {
            for j in 0..ntheta {
                // ∫₀¹ f r dr = Σ (w_i / 2) r_i f(r_i)
                weights.push(0.5 * w[i] * r[i] * dtheta * jac);
                points.push(matvec2(&map, [r[i] * cos[j], r[i] * sin[j]]));
            }
        }
        let curve = BoundaryCurve::new(points[(nr - 1) * ntheta..].to_vec())?;
        let metric = compute_metric(&curve)?;
        let normals = outward_normal(&curve)?;
        Ok(PolarGrid {
            nr,
            ntheta,
            r,
            theta,
            weights,
            points,
            map,
            map_inv: inv2(&map),
            dr,
            fft: Periodic::new(ntheta),
            cos,
            sin,
            curve,
            metric,
            normals,
        })
    }

    pub fn npts(&self) -> usize {
        self.nr * self.ntheta
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ntheta + j
    }

    /// Index of the first boundary node.
    pub fn boundary_offset(&self) -> usize {
        (self.nr - 1) * self.ntheta
    }

    pub fn boundary_curve(&self) -> &BoundaryCurve {
        &self.curve
    }

    /// Metric of the reference boundary Γ₀.
    pub fn boundary_metric(&self) -> &SurfaceMetric {
        &self.metric
    }

    /// Outward normals N of Γ₀.
    pub fn boundary_normals(&self) -> &NormalField {
        &self.normals
    }

    pub fn angular_fft(&self) -> &Periodic {
        &self.fft
    }

    /// Radial differentiation matrix (row-major, nr×nr).
    pub fn radial_diff_matrix(&self) -> &[f64] {
        &self.dr
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.weights).map(|((a, b), w)| a * b * w).sum()
    }

    pub fn inner_vec(&self, u: &VectorField, v: &VectorField) -> f64 {
        self.inner(&u[0], &v[0]) + self.inner(&u[1], &v[1])
    }

    pub fn norm_vec(&self, u: &VectorField) -> f64 {
        self.inner_vec(u, u).max(0.0).sqrt()
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        self.integrate(f) / self.weights.iter().sum::<f64>()
    }

    pub fn boundary_trace(&self, f: &[f64]) -> Vec<f64> {
        f[self.boundary_offset()..].to_vec()
    }

    pub fn boundary_trace_vec(&self, v: &VectorField) -> Vec<[f64; 2]> {
        let o = self.boundary_offset();
        (0..self.ntheta).map(|j| [v[0][o + j], v[1][o + j]]).collect()
    }

    /// Evaluate a function of physical position at every node.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.points.iter().map(|&p| f(p)).collect()
    }

    pub fn sample_vec(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> VectorField {
        let vals: Vec<[f64; 2]> = self.points.iter().map(|&p| f(p)).collect();
        [vals.iter().map(|v| v[0]).collect(), vals.iter().map(|v| v[1]).collect()]
    }

    pub fn d_r(&self, f: &[f64]) -> Vec<f64> {
        let (nr, nt) = (self.nr, self.ntheta);
        let mut out = vec![0.0; nr * nt];
        for i in 0..nr {
            for k in 0..nr {
                let d = self.dr[i * nr + k];
                if d == 0.0 {
                    continue;
                }
                let src = &f[k * nt..(k + 1) * nt];
                let dst = &mut out[i * nt..(i + 1) * nt];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += d * s;
                }
            }
        }
        out
    }

    pub fn d_theta(&self, f: &[f64]) -> Vec<f64> {
        let nt = self.ntheta;
        let mut out = Vec::with_capacity(f.len());
        for i in 0..self.nr {
            out.extend(self.fft.deriv(&f[i * nt..(i + 1) * nt], 1));
        }
        out
    }

    /// Cartesian gradient of a scalar field in physical coordinates.
    pub fn grad(&self, f: &[f64]) -> VectorField {
        let fr = self.d_r(f);
        let ft = self.d_theta(f);
        let n = self.npts();
        let mut g = [vec![0.0; n], vec![0.0; n]];
        let ei = &self.map_inv;
        for i in 0..self.nr {
            let inv_r = 1.0 / self.r[i];
            for j in 0..self.ntheta {
                let p = i * self.ntheta + j;
                let (c, s) = (self.cos[j], self.sin[j]);
                let g1 = c * fr[p] - s * inv_r * ft[p];
                let g2 = s * fr[p] + c * inv_r * ft[p];
                // ∂_x = E⁻ᵀ ∂_ξ
                g[0][p] = ei[0][0] * g1 + ei[1][0] * g2;
                g[1][p] = ei[0][1] * g1 + ei[1][1] * g2;
            }
        }
        g
    }

    /// ∇v with `out[p][i][k] = ∂_k v^i`.
    pub fn grad_vec(&self, v: &VectorField) -> MatrixField {
        let g0 = self.grad(&v[0]);
        let g1 = self.grad(&v[1]);
        (0..self.npts())
            .map(|p| [[g0[0][p], g0[1][p]], [g1[0][p], g1[1][p]]])
            .collect()
    }

    pub fn div(&self, v: &VectorField) -> Vec<f64> {
        let a = self.grad(&v[0]);
        let b = self.grad(&v[1]);
        a[0].iter().zip(&b[1]).map(|(x, y)| x + y).collect()
    }

    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.div(&self.grad(f))
    }

    pub fn laplacian_vec(&self, v: &VectorField) -> VectorField {
        [self.laplacian(&v[0]), self.laplacian(&v[1])]
    }

    /// Divergence of a matrix field row by row: out^i = ∂_j m^i_j.
    pub fn div_rows(&self, m: &MatrixField) -> VectorField {
        let n = self.npts();
        let mut out = [vec![0.0; n], vec![0.0; n]];
        for (i, o) in out.iter_mut().enumerate() {
            let row: VectorField = [m.iter().map(|x| x[i][0]).collect(), m.iter().map(|x| x[i][1]).collect()];
            *o = self.div(&row);
        }
        out
    }
}

/// Lagrangian flow map at one time level.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub eta: VectorField,
    /// `grad_eta[p][i][k] = ∂_k η^i`.
    pub grad_eta: MatrixField,
    pub a: MatrixField,
    pub det_grad_eta: Vec<f64>,
    pub time: f64,
    /// Velocity at `time`, when known; enables trapezoidal updates.
    pub velocity: Option<VectorField>,
}

impl FlowMap {
    /// η = Id, a = Id, det = 1 exactly.
    pub fn identity(grid: &PolarGrid) -> Self {
        let n = grid.npts();
        FlowMap {
            eta: [grid.points.iter().map(|p| p[0]).collect(), grid.points.iter().map(|p| p[1]).collect()],
            grad_eta: vec![IDENTITY; n],
            a: vec![IDENTITY; n],
            det_grad_eta: vec![1.0; n],
            time: 0.0,
            velocity: None,
        }
    }

    /// Build from node positions; ∇η by spectral differentiation.
    pub fn from_positions(grid: &PolarGrid, eta: VectorField, time: f64) -> Result<Self> {
        let grad_eta = grid.grad_vec(&eta);
        let det_grad_eta: Vec<f64> = grad_eta.iter().map(det2).collect();
        let mut flow = FlowMap { eta, grad_eta, a: Vec::new(), det_grad_eta, time, velocity: None };
        flow.a = compute_a(&flow)?;
        Ok(flow)
    }

    pub fn with_velocity(mut self, v: VectorField) -> Self {
        self.velocity = Some(v);
        self
    }
}

/// Advance η by one step. `v` is the velocity at the new time level; when the
/// flow carries its own velocity the update is trapezoidal, otherwise an
/// explicit step η + dt·v.
pub fn advance_flow_map(grid: &PolarGrid, flow: &FlowMap, v: &VectorField, dt: f64) -> Result<FlowMap> {
    assert!(dt > 0.0, "dt must be positive");
    let mut eta = flow.eta.clone();
    for c in 0..2 {
        match &flow.velocity {
            Some(vold) => {
                for p in 0..eta[c].len() {
                    eta[c][p] += 0.5 * dt * (vold[c][p] + v[c][p]);
                }
            }
            None => {
                for p in 0..eta[c].len() {
                    eta[c][p] += dt * v[c][p];
                }
            }
        }
    }
    let time = flow.time + dt;
    let next = FlowMap::from_positions(grid, eta, time)?;
    Ok(next.with_velocity(v.clone()))
}

/// Flow maps at every level of a velocity trajectory, starting from η = Id
/// and using trapezoidal updates.
pub fn flow_trajectory(grid: &PolarGrid, v: &[VectorField], dt: f64) -> Result<Vec<FlowMap>> {
    let mut out = Vec::with_capacity(v.len());
    let mut flow = FlowMap::identity(grid).with_velocity(v[0].clone());
    out.push(flow.clone());
    for vn in &v[1..] {
        flow = advance_flow_map(grid, &flow, vn, dt)?;
        out.push(flow.clone());
    }
    Ok(out)
}

/// a = (∇η)⁻¹ node by node.
pub fn compute_a(flow: &FlowMap) -> Result<MatrixField> {
    flow.grad_eta
        .iter()
        .map(|m| {
            let d = det2(m);
            if !(d > 0.0) {
                Err(Error::InvertibilityLost { det: d, time: flow.time })
            } else {
                Ok(inv2(m))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Def,
    DEta,
    SEta,
}

#[derive(Debug, Clone)]
pub struct TensorField {
    pub values: MatrixField,
    pub kind: TensorKind,
}

/// D_η(v)ⁱ_l = vⁱ,_k a^k_l + v^l,_k a^k_i from a precomputed gradient.
pub fn deformation_from_gradient(grad_v: &MatrixField, a: &MatrixField) -> MatrixField {
    grad_v
        .iter()
        .zip(a)
        .map(|(g, a)| {
            let ga = mul2(g, a);
            let t = transpose2(&ga);
            [[ga[0][0] + t[0][0], ga[0][1] + t[0][1]], [ga[1][0] + t[1][0], ga[1][1] + t[1][1]]]
        })
        .collect()
}

/// Def v = ∇v + ∇vᵀ from a precomputed gradient.
pub fn def_from_gradient(grad_v: &MatrixField) -> MatrixField {
    grad_v
        .iter()
        .map(|g| [[2.0 * g[0][0], g[0][1] + g[1][0]], [g[0][1] + g[1][0], 2.0 * g[1][1]]])
        .collect()
}

pub fn deformation_tensor_eta(grid: &PolarGrid, v: &VectorField, a: &MatrixField) -> TensorField {
    TensorField { values: deformation_from_gradient(&grid.grad_vec(v), a), kind: TensorKind::DEta }
}

pub fn deformation_tensor(grid: &PolarGrid, v: &VectorField) -> TensorField {
    TensorField { values: def_from_gradient(&grid.grad_vec(v)), kind: TensorKind::Def }
}

/// S_η(v, q) = ν D_η(v) − q Id.
pub fn stress_eta(grid: &PolarGrid, v: &VectorField, q: &[f64], a: &MatrixField, nu: f64) -> TensorField {
    let d = deformation_from_gradient(&grid.grad_vec(v), a);
    TensorField {
        values: d
            .iter()
            .zip(q)
            .map(|(m, &qp)| [[nu * m[0][0] - qp, nu * m[0][1]], [nu * m[1][0], nu * m[1][1] - qp]])
            .collect(),
        kind: TensorKind::SEta,
    }
}

/// Outcome of the three geometric controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlReport {
    /// max over nodes and entries of |aᵀ − Id|.
    pub max_a_minus_id: f64,
    /// min over boundary nodes of (aᵀN/|aᵀN|)·N.
    pub min_alignment: f64,
    pub min_det_a: f64,
    pub alignment_ok: bool,
    pub det_ok: bool,
}

impl ControlReport {
    pub fn pass(&self) -> bool {
        self.alignment_ok && self.det_ok
    }
}

pub const CONTROL_THRESHOLD: f64 = 0.5;

pub fn geometric_controls(grid: &PolarGrid, flow: &FlowMap, normals: &NormalField) -> ControlReport {
    let mut max_dev: f64 = 0.0;
    let mut min_det = f64::INFINITY;
    for a in &flow.a {
        for i in 0..2 {
            for k in 0..2 {
                let id = if i == k { 1.0 } else { 0.0 };
                max_dev = max_dev.max((a[k][i] - id).abs());
            }
        }
        min_det = min_det.min(det2(a));
    }
    let off = grid.boundary_offset();
    let mut min_align = f64::INFINITY;
    for (j, n) in normals.normals.iter().enumerate() {
        let at = transpose2(&flow.a[off + j]);
        let an = matvec2(&at, *n);
        let s = an[0].hypot(an[1]);
        min_align = min_align.min(dot2(an, *n) / s);
    }
    ControlReport {
        max_a_minus_id: max_dev,
        min_alignment: min_align,
        min_det_a: min_det,
        alignment_ok: min_align >= CONTROL_THRESHOLD,
        det_ok: min_det >= CONTROL_THRESHOLD,
    }
}

/// The moving interface η(Γ₀): η restricted to the outer ring.
pub fn pushforward_boundary(grid: &PolarGrid, flow: &FlowMap) -> Result<BoundaryCurve> {
    BoundaryCurve::new(grid.boundary_trace_vec(&flow.eta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_disk_area() {
        let g = PolarGrid::new(16, 32).unwrap();
        assert!((g.weights.iter().sum::<f64>() - PI).abs() < 1e-12);
        assert!(g.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn gradient_exact_on_polynomial() {
        let g = PolarGrid::new(12, 24).unwrap();
        let f = g.sample(|p| p[0].powi(3) * p[1] - 2.0 * p[1] * p[1] + p[0]);
        let gr = g.grad(&f);
        for (k, p) in g.points.iter().enumerate() {
            let (x, y) = (p[0], p[1]);
            assert!((gr[0][k] - (3.0 * x * x * y + 1.0)).abs() < 1e-11);
            assert!((gr[1][k] - (x.powi(3) - 4.0 * y)).abs() < 1e-11);
        }
    }

    #[test]
    fn gradient_exact_on_mapped_domain() {
        let g = PolarGrid::with_map(12, 24, [[1.2, 0.0], [0.0, 1.0 / 1.2]]).unwrap();
        let f = g.sample(|p| p[0] * p[0] * p[1]);
        let gr = g.grad(&f);
        for (k, p) in g.points.iter().enumerate() {
            assert!((gr[0][k] - 2.0 * p[0] * p[1]).abs() < 1e-11);
            assert!((gr[1][k] - p[0] * p[0]).abs() < 1e-11);
        }
        assert!((g.weights.iter().sum::<f64>() - PI).abs() < 1e-12);
    }

    #[test]
    fn identity_flow_inverse_is_identity() {
        let g = PolarGrid::new(8, 16).unwrap();
        let f = FlowMap::from_positions(&g, FlowMap::identity(&g).eta, 0.0).unwrap();
        for a in &f.a {
            assert!((a[0][0] - 1.0).abs() < 1e-12 && a[0][1].abs() < 1e-12);
        }
    }

    #[test]
    fn dilation_and_shear_inverses() {
        let g = PolarGrid::new(8, 16).unwrap();
        let eta = g.sample_vec(|p| [2.0 * p[0], 2.0 * p[1]]);
        let f = FlowMap::from_positions(&g, eta, 0.0).unwrap();
        assert!(f.a.iter().all(|a| (a[0][0] - 0.5).abs() < 1e-12 && (a[1][1] - 0.5).abs() < 1e-12));
        let eta = g.sample_vec(|p| [p[0] + 0.3 * p[1], p[1]]);
        let f = FlowMap::from_positions(&g, eta, 0.0).unwrap();
        assert!(f.a.iter().all(|a| (a[0][1] + 0.3).abs() < 1e-12 && a[1][0].abs() < 1e-12));
    }

    #[test]
    fn rotation_has_no_deformation() {
        let g = PolarGrid::new(8, 16).unwrap();
        let v = g.sample_vec(|p| [-p[1], p[0]]);
        let d = deformation_tensor(&g, &v);
        assert!(d.values.iter().all(|m| m.iter().flatten().all(|x| x.abs() < 1e-12)));
        let v = g.sample_vec(|p| [p[0], -p[1]]);
        let d = deformation_tensor(&g, &v);
        assert!(d.values.iter().all(|m| (m[0][0] - 2.0).abs() < 1e-12 && (m[1][1] + 2.0).abs() < 1e-12));
    }

    #[test]
    fn stress_reduces_to_pressure() {
        let g = PolarGrid::new(6, 16).unwrap();
        let v = crate::field::zeros_vec(g.npts());
        let q = vec![1.0; g.npts()];
        let s = stress_eta(&g, &v, &q, &vec![IDENTITY; g.npts()], 0.7);
        assert!(s.values.iter().all(|m| (m[0][0] + 1.0).abs() < 1e-15 && m[0][1] == 0.0));
    }

    #[test]
    fn translation_step() {
        let g = PolarGrid::new(6, 16).unwrap();
        let f0 = FlowMap::identity(&g);
        let v = g.sample_vec(|_| [1.0, 0.0]);
        let f1 = advance_flow_map(&g, &f0, &v, 0.1).unwrap();
        for p in 0..g.npts() {
            assert!((f1.eta[0][p] - g.points[p][0] - 0.1).abs() < 1e-15);
            assert!((f1.det_grad_eta[p] - 1.0).abs() < 1e-12);
        }
        assert!((f1.time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn controls_on_identity_and_dilation() {
        let g = PolarGrid::new(6, 16).unwrap();
        let id = FlowMap::identity(&g);
        let rep = geometric_controls(&g, &id, g.boundary_normals());
        assert!(rep.pass() && rep.max_a_minus_id == 0.0 && (rep.min_alignment - 1.0).abs() < 1e-14);
        let f = FlowMap::from_positions(&g, g.sample_vec(|p| [2.0 * p[0], 2.0 * p[1]]), 0.0).unwrap();
        let rep = geometric_controls(&g, &f, g.boundary_normals());
        assert!((rep.min_det_a - 0.25).abs() < 1e-12 && !rep.det_ok);
    }

    #[test]
    fn pushforward_of_dilation_is_circle_of_radius_two() {
        let g = PolarGrid::new(6, 16).unwrap();
        let f = FlowMap::from_positions(&g, g.sample_vec(|p| [2.0 * p[0], 2.0 * p[1]]), 0.0).unwrap();
        let c = pushforward_boundary(&g, &f).unwrap();
        assert!(c.samples().iter().all(|p| (p[0].hypot(p[1]) - 2.0).abs() < 1e-14));
    }
}
