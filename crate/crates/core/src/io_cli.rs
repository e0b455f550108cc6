//! Configuration files, scenarios, CSV output and the `run`, `verify` and
//! `sweep` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{energy_law_report, korn_check, loglog_slope, volume_conservation};
use crate::error::{Error, Result};
use crate::field::{dot2, matvec2, zeros_vec, VectorField};
use crate::fixedpoint::{
    solve_nonlinear, Forcing, IterationConfig, NonlinearProblem, NonlinearSolution, Trajectory,
};
use crate::geometry::{
    compute_metric, normal_bending_form, normal_curvature_forcing, outward_normal, surface_laplacian,
    surface_laplacian_vec, BoundaryCurve,
};
use crate::lagrangian::PolarGrid;
use crate::linear_stokes::{
    build_basis, compatibility_check, LinearProblemData, PhysicalParams, StokesSolver,
};

pub const SCENARIOS: [&str; 4] = ["equilibrium_disk", "perturbed_ellipse", "manufactured_linear", "custom"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    T,
    Dt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub nr: usize,
    pub ntheta: usize,
    pub m: usize,
    pub t_final: f64,
    pub dt: f64,
    pub nu: f64,
    pub sigma: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub outer_max_iter: usize,
    /// `None` is written as `auto`.
    pub m_cap: Option<f64>,
    pub t_max: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Eccentricity of the reference ellipse.
    pub ecc: f64,
    /// Angular velocity of the initial rigid rotation (custom scenario).
    pub spin: f64,
    pub sweep_param: SweepParam,
    pub sweep_values: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "equilibrium_disk".into(),
            nr: 16,
            ntheta: 32,
            m: 16,
            t_final: 0.05,
            dt: 1e-3,
            nu: 1.0,
            sigma: 1.0,
            inner_tol: 1e-7,
            inner_max_iter: 40,
            outer_max_iter: 40,
            m_cap: None,
            t_max: 1.0,
            output_dir: PathBuf::from("out"),
            seed: 0,
            ecc: 0.3,
            spin: 0.0,
            sweep_param: SweepParam::T,
            sweep_values: vec![0.025, 0.05, 0.1],
        }
    }
}

fn invalid(field: &str, msg: impl Into<String>) -> Error {
    Error::Validation { field: field.into(), msg: msg.into() }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !SCENARIOS.contains(&self.scenario.as_str()) {
            return Err(Error::UnknownScenario(self.scenario.clone()));
        }
        if self.nr < 2 {
            return Err(invalid("nr", "must be at least 2"));
        }
        if self.ntheta < 8 || !self.ntheta.is_multiple_of(2) {
            return Err(invalid("ntheta", "must be even and at least 8"));
        }
        if self.m == 0 {
            return Err(invalid("m", "must be positive"));
        }
        for (name, v) in [
            ("T", self.t_final),
            ("dt", self.dt),
            ("nu", self.nu),
            ("sigma", self.sigma),
            ("inner_tol", self.inner_tol),
            ("T_max", self.t_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if self.inner_max_iter == 0 {
            return Err(invalid("inner_max_iter", "must be positive"));
        }
        if self.outer_max_iter == 0 {
            return Err(invalid("outer_max_iter", "must be positive"));
        }
        if let Some(c) = self.m_cap {
            if !(c > 0.0) {
                return Err(invalid("M_cap", "must be positive or auto"));
            }
        }
        if !(0.0..1.0).contains(&self.ecc) {
            return Err(invalid("ecc", "must lie in [0, 1)"));
        }
        if !self.spin.is_finite() {
            return Err(invalid("spin", "must be finite"));
        }
        if self.sweep_values.is_empty() || self.sweep_values.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("sweep_values", "must be a nonempty list of positive numbers"));
        }
        self.iteration_config().validate()
    }

    pub fn iteration_config(&self) -> IterationConfig {
        IterationConfig {
            t_final: self.t_final,
            dt: self.dt,
            m: self.m,
            inner_tol: self.inner_tol,
            inner_max_iter: self.inner_max_iter,
            outer_max_iter: self.outer_max_iter,
            m_cap: self.m_cap,
            t_max: self.t_max,
        }
    }

    pub fn params(&self) -> Result<PhysicalParams> {
        PhysicalParams::new(self.nu, self.sigma)
    }

    /// Canonical `key = value` text; [`parse_config`] inverts it.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "nr = {}", self.nr);
        let _ = writeln!(s, "ntheta = {}", self.ntheta);
        let _ = writeln!(s, "m = {}", self.m);
        let _ = writeln!(s, "T = {:?}", self.t_final);
        let _ = writeln!(s, "dt = {:?}", self.dt);
        let _ = writeln!(s, "nu = {:?}", self.nu);
        let _ = writeln!(s, "sigma = {:?}", self.sigma);
        let _ = writeln!(s, "inner_tol = {:?}", self.inner_tol);
        let _ = writeln!(s, "inner_max_iter = {}", self.inner_max_iter);
        let _ = writeln!(s, "outer_max_iter = {}", self.outer_max_iter);
        match self.m_cap {
            Some(c) => writeln!(s, "M_cap = {c:?}"),
            None => writeln!(s, "M_cap = auto"),
        }
        .ok();
        let _ = writeln!(s, "T_max = {:?}", self.t_max);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "ecc = {:?}", self.ecc);
        let _ = writeln!(s, "spin = {:?}", self.spin);
        let _ = writeln!(
            s,
            "sweep_param = {}",
            match self.sweep_param {
                SweepParam::T => "T",
                SweepParam::Dt => "dt",
            }
        );
        let _ = writeln!(s, "sweep_values = {}", list(&self.sweep_values));
        s
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse { line, msg: format!("cannot parse `{v}` for `{key}`") })
}

/// Parse `key = value` lines with `#` comments; unset keys keep defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Parse { line, msg: format!("expected `key = value`, got `{content}`") });
        };
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Parse { line, msg: format!("duplicate key `{key}`") });
        }
        match key {
            "scenario" => cfg.scenario = value.to_string(),
            "nr" => cfg.nr = parse_num(line, key, value)?,
            "ntheta" => cfg.ntheta = parse_num(line, key, value)?,
            "m" => cfg.m = parse_num(line, key, value)?,
            "T" => cfg.t_final = parse_num(line, key, value)?,
            "dt" => cfg.dt = parse_num(line, key, value)?,
            "nu" => cfg.nu = parse_num(line, key, value)?,
            "sigma" => cfg.sigma = parse_num(line, key, value)?,
            "inner_tol" => cfg.inner_tol = parse_num(line, key, value)?,
            "inner_max_iter" => cfg.inner_max_iter = parse_num(line, key, value)?,
            "outer_max_iter" => cfg.outer_max_iter = parse_num(line, key, value)?,
            "M_cap" => {
                cfg.m_cap = if value == "auto" { None } else { Some(parse_num(line, key, value)?) };
            }
            "T_max" => cfg.t_max = parse_num(line, key, value)?,
            "output_dir" => cfg.output_dir = PathBuf::from(value),
            "seed" => cfg.seed = parse_num(line, key, value)?,
            "ecc" => cfg.ecc = parse_num(line, key, value)?,
            "spin" => cfg.spin = parse_num(line, key, value)?,
            "sweep_param" => {
                cfg.sweep_param = match value {
                    "T" => SweepParam::T,
                    "dt" => SweepParam::Dt,
                    _ => return Err(Error::Parse { line, msg: format!("sweep_param must be T or dt, got `{value}`") }),
                }
            }
            "sweep_values" => {
                cfg.sweep_values = value
                    .split(',')
                    .map(|v| parse_num(line, key, v.trim()))
                    .collect::<Result<Vec<f64>>>()?;
            }
            _ => return Err(Error::Parse { line, msg: format!("unknown key `{key}`") }),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_text()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Closed-form pair (w, p) for the linear problem. With the rotation
/// R = (y, −x) and B = (2x²y, −2xy² − x²), both divergence-free:
/// w = cos t·R + sin t·B, p = t(x² − y²) + xy + 3/10.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Manufactured;

impl Manufactured {
    pub fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let (c, s) = (t.cos(), t.sin());
        [c * x[1] + s * 2.0 * x[0] * x[0] * x[1], -c * x[0] - s * (2.0 * x[0] * x[1] * x[1] + x[0] * x[0])]
    }

    /// ∫₀ᵗ w.
    pub fn velocity_integral(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let (a, b) = (t.sin(), 1.0 - t.cos());
        [a * x[1] + b * 2.0 * x[0] * x[0] * x[1], -a * x[0] - b * (2.0 * x[0] * x[1] * x[1] + x[0] * x[0])]
    }

    pub fn velocity_dt(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let (c, s) = (t.cos(), t.sin());
        [-s * x[1] + c * 2.0 * x[0] * x[0] * x[1], s * x[0] - c * (2.0 * x[0] * x[1] * x[1] + x[0] * x[0])]
    }

    pub fn velocity_laplacian(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let s = t.sin();
        [s * 4.0 * x[1], -s * (4.0 * x[0] + 2.0)]
    }

    /// Def w = ∇w + ∇wᵀ.
    pub fn velocity_def(&self, t: f64, x: [f64; 2]) -> [[f64; 2]; 2] {
        let s = t.sin();
        let off = s * (2.0 * x[0] * x[0] - 2.0 * x[1] * x[1] - 2.0 * x[0]);
        [[s * 8.0 * x[0] * x[1], off], [off, -s * 8.0 * x[0] * x[1]]]
    }

    pub fn pressure(&self, t: f64, x: [f64; 2]) -> f64 {
        t * (x[0] * x[0] - x[1] * x[1]) + x[0] * x[1] + 0.3
    }

    pub fn pressure_grad(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        [2.0 * t * x[0] + x[1], -2.0 * t * x[1] + x[0]]
    }

    /// f = w_t − νΔw + ∇p, ḡ = ν Def w N − pN − σ(N·Δ₀∫w)N, B̄ = ā = 0.
    pub fn data(&self, grid: &PolarGrid, params: &PhysicalParams, nsteps: usize, dt: f64) -> Result<LinearProblemData> {
        let mut data = LinearProblemData::zeros(grid, nsteps, dt);
        let normals = &grid.boundary_normals().normals;
        let bpts = grid.boundary_curve().samples().to_vec();
        for n in 0..=nsteps {
            let t = n as f64 * dt;
            data.f_bar[n] = grid.sample_vec(|x| {
                let (wt, lw, gp) = (self.velocity_dt(t, x), self.velocity_laplacian(t, x), self.pressure_grad(t, x));
                [wt[0] - params.nu * lw[0] + gp[0], wt[1] - params.nu * lw[1] + gp[1]]
            });
            let iw: Vec<[f64; 2]> = bpts.iter().map(|&x| self.velocity_integral(t, x)).collect();
            let lap = surface_laplacian_vec(grid.boundary_metric(), &iw)?;
            for j in 0..grid.ntheta {
                let x = bpts[j];
                let nn = normals[j];
                let tr = matvec2(&self.velocity_def(t, x), nn);
                let k = -self.pressure(t, x) - params.sigma * dot2(nn, lap[j]);
                data.g_bar[n][j] = [params.nu * tr[0] + k * nn[0], params.nu * tr[1] + k * nn[1]];
            }
        }
        data.w0 = grid.sample_vec(|x| self.velocity(0.0, x));
        Ok(data)
    }

    pub fn exact(&self, grid: &PolarGrid, nsteps: usize, dt: f64) -> Trajectory {
        Trajectory {
            dt,
            velocity: (0..=nsteps).map(|n| grid.sample_vec(|x| self.velocity(n as f64 * dt, x))).collect(),
            pressure: (0..=nsteps).map(|n| grid.sample(|x| self.pressure(n as f64 * dt, x))).collect(),
        }
    }
}

/// Everything a run needs: reference grid, initial velocity, forcing.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub grid: PolarGrid,
    pub u0: VectorField,
    pub forcing: Option<Arc<Forcing>>,
    pub manufactured: Option<Manufactured>,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario").field("name", &self.name).field("forcing", &self.forcing.is_some()).finish()
    }
}

impl Scenario {
    pub fn initial_curve(&self) -> &BoundaryCurve {
        self.grid.boundary_curve()
    }

    /// σN·Δ₀(x) on the reference boundary.
    pub fn surface_forcing(&self, params: &PhysicalParams) -> Result<Vec<f64>> {
        let g = &self.grid;
        let k = normal_curvature_forcing(g.boundary_curve(), g.boundary_metric(), g.boundary_normals())?;
        Ok(k.into_iter().map(|v| params.sigma * v).collect())
    }
}

/// Area-preserving ellipse map diag(a, 1/a) with a = (1 − e²)^(−1/4).
pub fn ellipse_map(ecc: f64) -> [[f64; 2]; 2] {
    let a = (1.0 - ecc * ecc).powf(-0.25);
    [[a, 0.0], [0.0, 1.0 / a]]
}

pub fn build_scenario(cfg: &RunConfig) -> Result<Scenario> {
    let disk = || PolarGrid::new(cfg.nr, cfg.ntheta);
    let ellipse = || PolarGrid::with_map(cfg.nr, cfg.ntheta, ellipse_map(cfg.ecc));
    let (grid, u0, manufactured) = match cfg.scenario.as_str() {
        "equilibrium_disk" => {
            let g = disk()?;
            let u0 = zeros_vec(g.npts());
            (g, u0, None)
        }
        "perturbed_ellipse" => {
            let g = ellipse()?;
            let u0 = zeros_vec(g.npts());
            (g, u0, None)
        }
        "manufactured_linear" => {
            let g = disk()?;
            let u0 = g.sample_vec(|x| Manufactured.velocity(0.0, x));
            (g, u0, Some(Manufactured))
        }
        "custom" => {
            let g = ellipse()?;
            let w = cfg.spin;
            let u0 = g.sample_vec(|x| [-w * x[1], w * x[0]]);
            (g, u0, None)
        }
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(Scenario { name: cfg.scenario.clone(), grid, u0, forcing: None, manufactured })
}

const FIELD_COLUMNS: &str = "\
# One file per snapshot, snapshot_NNNNN.csv, rows in node order (radial index i, then angular index j).
i: radial index, 0 = innermost ring, nr-1 = boundary
j: angular index
t: time
x, y: reference position of the node
vx, vy: Lagrangian velocity v(t, x)
p: pressure q(t, x)
";

/// Node-ordered CSV per snapshot plus `columns.txt`.
pub fn export_fields(grid: &PolarGrid, traj: &Trajectory, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("columns.txt"), FIELD_COLUMNS)?;
    for (n, (v, p)) in traj.velocity.iter().zip(&traj.pressure).enumerate() {
        let t = n as f64 * traj.dt;
        let mut s = String::from("i,j,t,x,y,vx,vy,p\n");
        for i in 0..grid.nr {
            for j in 0..grid.ntheta {
                let k = grid.idx(i, j);
                let x = grid.points[k];
                let _ = writeln!(
                    s,
                    "{i},{j},{t:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                    x[0], x[1], v[0][k], v[1][k], p[k]
                );
            }
        }
        fs::write(dir.join(format!("snapshot_{n:05}.csv")), s)?;
    }
    Ok(())
}

/// `key = value` manifest of a nonlinear run.
pub fn manifest(cfg: &RunConfig, sol: &NonlinearSolution) -> String {
    let mut s = String::from("# run manifest\n");
    s.push_str(&cfg.to_text());
    let _ = writeln!(s, "result.outer_iterations = {}", sol.outer.len());
    let _ = writeln!(s, "result.trust_radius = {:.10e}", sol.cap);
    let _ = writeln!(s, "result.trust_usage = {:.10e}", sol.cap_usage);
    let _ = writeln!(s, "result.contraction_ratio = {:.10e}", sol.contraction.rho);
    let _ = writeln!(s, "result.contracting = {}", sol.contraction.contracting);
    let _ = writeln!(s, "result.min_det_a = {:.10e}", sol.controls.min_det_a);
    let _ = writeln!(s, "result.min_alignment = {:.10e}", sol.controls.min_alignment);
    let _ = writeln!(s, "result.max_tangency = {:.10e}", sol.max_tangency);
    let _ = writeln!(s, "result.boundary_residual = {:.10e}", sol.boundary_residual);
    let _ = writeln!(s, "result.interior_residual = {:.10e}", sol.interior_residual);
    for r in &sol.outer {
        let _ = writeln!(
            s,
            "outer.{}.x_norm = {:.10e}\nouter.{}.rel_change = {:.10e}\nouter.{}.inner_iterations = {}",
            r.index, r.x_norm, r.index, r.rel_change, r.index, r.inner_iterations
        );
    }
    for r in &sol.inner {
        let _ = writeln!(
            s,
            "inner.{}.x_norm = {:.10e}\ninner.{}.diff_norm = {:.10e}\ninner.{}.ratio = {}\ninner.{}.tangency = {:.3e}",
            r.index,
            r.x_norm,
            r.index,
            r.diff_norm,
            r.index,
            r.ratio.map_or("none".to_string(), |x| format!("{x:.10e}")),
            r.index,
            r.tangency
        );
    }
    s
}

const OUTPUT_COLUMNS: &str = "\
energy.csv: t, K (kinetic energy), A (boundary length), total (K + sigma A), dissipation ((nu/2) int |D_eta v|^2 det), residual (energy-law defect of the step ending at t; 0 at t = 0), y (Gronwall budget), phi (forcing budget)
sweep.csv: value (swept T or dt), rho (fitted inner contraction ratio), outer_iterations, inner_iterations (final outer iterate), max_energy_residual
linear_errors.csv: t, velocity_error (L2), pressure_error (L2, mean-zero parts), velocity_norm, pressure_norm
modes.csv: t, k (basis mode index), lambda_k (modal velocity coefficient), d_k (its time integral)
fields/: see fields/columns.txt
";

/// Solve a nonlinear scenario and return the solution.
pub fn run_nonlinear(cfg: &RunConfig, scenario: &Scenario) -> Result<NonlinearSolution> {
    let params = cfg.params()?;
    let mut problem = NonlinearProblem::new(scenario.grid.clone(), params, cfg.m, scenario.u0.clone())?;
    if let Some(f) = &scenario.forcing {
        problem = problem.with_forcing(f.clone());
    }
    solve_nonlinear(&problem, &cfg.iteration_config())
}

/// Relative L²(0,T;L²) errors of the manufactured linear solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearErrors {
    pub velocity: f64,
    pub pressure: f64,
    pub per_time: Vec<[f64; 4]>,
    /// Modal trajectory as written to `modes.csv`.
    pub modes_csv: String,
}

pub fn run_manufactured(cfg: &RunConfig, scenario: &Scenario) -> Result<LinearErrors> {
    let params = cfg.params()?;
    let mf = scenario.manufactured.unwrap_or(Manufactured);
    let grid = &scenario.grid;
    let nsteps = cfg.iteration_config().nsteps();
    let data = mf.data(grid, &params, nsteps, cfg.dt)?;
    let solver = StokesSolver::new(grid.clone(), cfg.m, params)?;
    let sol = solver.solve(&data)?;
    let pr = solver.recover_pressure(&sol)?;
    let exact = mf.exact(grid, nsteps, cfg.dt);
    let w = crate::fixedpoint::trapezoid_weights(nsteps + 1, cfg.dt);
    let (mut ev, mut nv, mut ep, mut np) = (0.0, 0.0, 0.0, 0.0);
    let mut per_time = Vec::with_capacity(nsteps + 1);
    for n in 0..=nsteps {
        let d = crate::field::sub_vec(&sol.velocity[n], &exact.velocity[n]);
        let pe = &exact.pressure[n];
        let pm = grid.mean(pe);
        let pe0: Vec<f64> = pe.iter().map(|x| x - pm).collect();
        let dp = crate::field::sub(&pr[n].p, &pe0);
        let row = [grid.inner_vec(&d, &d), grid.inner(&dp, &dp), grid.inner_vec(&exact.velocity[n], &exact.velocity[n]), grid.inner(&pe0, &pe0)];
        ev += w[n] * row[0];
        ep += w[n] * row[1];
        nv += w[n] * row[2];
        np += w[n] * row[3];
        per_time.push(row.map(f64::sqrt));
    }
    Ok(LinearErrors { velocity: (ev / nv).sqrt(), pressure: (ep / np).sqrt(), per_time, modes_csv: sol.modes_csv() })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// The `run` command: solve, then write fields, energy CSVs and manifest.
pub fn command_run(cfg: &RunConfig) -> Result<String> {
    let scenario = build_scenario(cfg)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    write(&out.join("columns.txt"), OUTPUT_COLUMNS)?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    if scenario.manufactured.is_some() {
        let e = run_manufactured(cfg, &scenario)?;
        let mut csv = String::from("t,velocity_error,pressure_error,velocity_norm,pressure_norm\n");
        for (n, r) in e.per_time.iter().enumerate() {
            let _ = writeln!(csv, "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}", n as f64 * cfg.dt, r[0], r[1], r[2], r[3]);
        }
        write(&out.join("linear_errors.csv"), &csv)?;
        write(&out.join("modes.csv"), &e.modes_csv)?;
        let summary = format!(
            "# manufactured linear solve\n{}result.velocity_rel_error = {:.10e}\nresult.pressure_rel_error = {:.10e}\n",
            cfg.to_text(),
            e.velocity,
            e.pressure
        );
        write(&out.join("manifest.txt"), &summary)?;
        return Ok(format!(
            "manufactured_linear: relative L2L2 error velocity {:.3e}, pressure {:.3e}",
            e.velocity, e.pressure
        ));
    }
    let sol = run_nonlinear(cfg, &scenario)?;
    let params = cfg.params()?;
    let energy = energy_law_report(&scenario.grid, &params, &sol.solution, &sol.flows, Some(&sol.data))?;
    write(&out.join("energy.csv"), &energy.to_csv())?;
    write(&out.join("energy_summary.txt"), &energy.summary())?;
    write(&out.join("manifest.txt"), &manifest(cfg, &sol))?;
    export_fields(&scenario.grid, &sol.solution, &out.join("fields"))?;
    Ok(format!(
        "{}: converged in {} outer iterations, rho = {:.3e}, max energy residual = {:.3e}, boundary residual = {:.3e}",
        cfg.scenario,
        sol.outer.len(),
        sol.contraction.rho,
        energy.max_residual(),
        sol.boundary_residual
    ))
}

/// The `sweep` command: rerun over T or dt and tabulate contraction ratios.
pub fn command_sweep(cfg: &RunConfig) -> Result<String> {
    let scenario = build_scenario(cfg)?;
    if scenario.manufactured.is_some() {
        return Err(invalid("scenario", "sweep needs a nonlinear scenario"));
    }
    let params = cfg.params()?;
    let mut csv = String::from("value,rho,outer_iterations,inner_iterations,max_energy_residual\n");
    for &value in &cfg.sweep_values {
        let mut c = cfg.clone();
        match cfg.sweep_param {
            SweepParam::T => c.t_final = value,
            SweepParam::Dt => c.dt = value,
        }
        c.validate()?;
        let sol = run_nonlinear(&c, &scenario)?;
        let energy = energy_law_report(&scenario.grid, &params, &sol.solution, &sol.flows, None)?;
        let _ = writeln!(
            csv,
            "{value:?},{:.10e},{},{},{:.10e}",
            sol.contraction.rho,
            sol.outer.len(),
            sol.inner.len(),
            energy.max_residual()
        );
    }
    fs::create_dir_all(&cfg.output_dir)?;
    write(&cfg.output_dir.join("columns.txt"), OUTPUT_COLUMNS)?;
    write(&cfg.output_dir.join("sweep.csv"), &csv)?;
    Ok(csv)
}

/// One line of the `verify` report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check { name: name.into(), pass, detail }
}

/// Random trigonometric boundary field of degree ≤ 6.
pub fn random_boundary_field(m: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let c: Vec<[f64; 4]> = (0..=6)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    (0..m)
        .map(|j| {
            let y = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            let mut v = [0.0; 2];
            for (k, ck) in c.iter().enumerate() {
                let (s, co) = ((k as f64 * y).sin(), (k as f64 * y).cos());
                v[0] += ck[0] * co + ck[1] * s;
                v[1] += ck[2] * co + ck[3] * s;
            }
            v
        })
        .collect()
}

/// Worst relative errors of the boundary integration-by-parts identity and
/// of surface-Laplacian symmetry over `samples` random field pairs.
pub fn geometry_identity_errors(curve: &BoundaryCurve, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let metric = compute_metric(curve)?;
    let normals = outward_normal(curve)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = curve.len();
    let (mut ibp, mut sym) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let u = random_boundary_field(m, &mut rng);
        let v = random_boundary_field(m, &mut rng);
        let lu = surface_laplacian_vec(&metric, &u)?;
        let lhs: Vec<f64> = (0..m).map(|j| dot2(normals.normals[j], lu[j]) * dot2(normals.normals[j], v[j])).collect();
        let lhs = metric.integrate(&lhs);
        let rhs = -normal_bending_form(&metric, &normals, &u, &v)?;
        ibp = ibp.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
        let f: Vec<f64> = u.iter().map(|p| p[0]).collect();
        let h: Vec<f64> = v.iter().map(|p| p[1]).collect();
        let lf = surface_laplacian(&metric, &f)?;
        let lh = surface_laplacian(&metric, &h)?;
        let a = metric.integrate(&lf.iter().zip(&h).map(|(x, y)| x * y).collect::<Vec<_>>());
        let b = metric.integrate(&f.iter().zip(&lh).map(|(x, y)| x * y).collect::<Vec<_>>());
        sym = sym.max((a - b).abs() / a.abs().max(b.abs()));
    }
    Ok((ibp, sym))
}

/// The invariant suite behind `verify`.
pub fn verify_suite(cfg: &RunConfig) -> Result<Vec<Check>> {
    let params = cfg.params()?;
    let mut out = Vec::new();
    let curve = BoundaryCurve::ellipse(64, 1.3, 0.8)?;
    let (ibp, sym) = geometry_identity_errors(&curve, 50, cfg.seed)?;
    out.push(check("boundary_integration_by_parts", ibp <= 1e-9, format!("max relative error {ibp:.2e}")));
    out.push(check("surface_laplacian_symmetry", sym <= 1e-9, format!("max relative error {sym:.2e}")));
    let mut curv: f64 = 0.0;
    for radius in [0.5, 1.0, 2.0] {
        let c = BoundaryCurve::circle(64, radius)?;
        let k = normal_curvature_forcing(&c, &compute_metric(&c)?, &outward_normal(&c)?)?;
        curv = curv.max(k.iter().map(|v| (v + 1.0 / radius).abs()).fold(0.0, f64::max));
    }
    out.push(check("circle_curvature", curv <= 1e-10, format!("max error {curv:.2e}")));
    let grid = PolarGrid::new(cfg.nr, cfg.ntheta)?;
    let korn = korn_check(&grid, 40, cfg.seed)?;
    out.push(check(
        "korn_constant",
        korn.pass,
        format!("fitted {:.4} vs {:.4} on doubled samples", korn.constant, korn.constant_doubled),
    ));
    let basis = build_basis(&grid, cfg.m)?;
    let div = basis
        .fields
        .iter()
        .map(|f| grid.div(&f.field).iter().fold(0.0f64, |m, d| m.max(d.abs())))
        .fold(0.0, f64::max);
    out.push(check("basis_divergence", div <= 1e-10, format!("max |div| {div:.2e}")));
    let spin = grid.sample_vec(|x| [-x[1], x[0]]);
    let comp = compatibility_check(&grid, &spin, &vec![[0.0; 2]; grid.ntheta], &params);
    out.push(check("rotation_compatibility", comp.pass, format!("tangential defect {:.2e}", comp.max_defect)));
    // Short relaxation run at two steps for the energy law.
    let mut short = cfg.clone();
    short.scenario = "perturbed_ellipse".into();
    short.t_final = 0.02;
    let scenario = build_scenario(&short)?;
    let mut dts = Vec::new();
    let mut res = Vec::new();
    let mut tangency: f64 = 0.0;
    let mut volume: f64 = 0.0;
    let mut monotone = true;
    for dt in [2e-3, 1e-3] {
        short.dt = dt;
        let sol = run_nonlinear(&short, &scenario)?;
        let e = energy_law_report(&scenario.grid, &params, &sol.solution, &sol.flows, None)?;
        dts.push(dt);
        res.push(e.max_residual());
        monotone &= e.non_increasing();
        tangency = tangency.max(sol.max_tangency);
        volume = volume.max(volume_conservation(&sol.flows));
    }
    let slope = loglog_slope(&dts, &res);
    out.push(check(
        "energy_law_order",
        (slope - 2.0).abs() <= 0.2,
        format!("residuals {:.2e}, {:.2e}; slope {slope:.3}", res[0], res[1]),
    ));
    out.push(check("energy_non_increasing", monotone, "K + sigma A".into()));
    out.push(check("tangency_invariant", tangency <= 1e-12, format!("max |g1.N| {tangency:.2e}")));
    out.push(check("volume_conservation", volume <= 1e-6, format!("max |det - 1| {volume:.2e}")));
    Ok(out)
}

#[derive(Debug, Parser)]
#[command(name = "capillary", about = "Lagrangian fixed-point solver for viscous free-surface flow with surface tension")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for random fields; overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one scenario and write fields, energy CSVs and a manifest.
    Run(CommonArgs),
    /// Run the invariant suite and print PASS/FAIL per check.
    Verify(CommonArgs),
    /// Repeat `run` over the configured T or dt values.
    Sweep(CommonArgs),
}

fn resolve(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> i32 {
    if e.is_config_error() {
        2
    } else {
        1
    }
}

/// Worker threads from CAPILLARY_THREADS, if set.
fn init_threads() {
    if let Some(n) = std::env::var("CAPILLARY_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Entry point: 0 on success, 1 on numerical failure, 2 on configuration
/// errors. Diagnostics go to stdout, errors to stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let (Command::Run(args) | Command::Verify(args) | Command::Sweep(args)) = &cli.command;
    // Anything that stops the configuration from loading is a config error.
    let cfg = match resolve(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let result = match &cli.command {
        Command::Run(_) => command_run(&cfg).map(|s| {
            println!("{s}");
            0
        }),
        Command::Sweep(_) => command_sweep(&cfg).map(|s| {
            print!("{s}");
            0
        }),
        Command::Verify(_) => verify_suite(&cfg).map(|checks| {
            let mut code = 0;
            for c in &checks {
                println!("{} {} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                if !c.pass {
                    code = 1;
                }
            }
            code
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
