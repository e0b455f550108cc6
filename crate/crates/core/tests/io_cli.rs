#![allow(clippy::needless_range_loop)]

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use capillary::fixedpoint::Trajectory;
use capillary::io_cli::{
    build_scenario, ellipse_map, export_fields, load_config, parse_config, run_command, save_config, Manufactured,
    RunConfig, SweepParam, SCENARIOS,
};
use capillary::lagrangian::PolarGrid;
use capillary::Error;
use common::{fd_first, fd_second};
use proptest::prelude::*;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("run.conf");
    save_config(cfg, &p).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("capillary").chain(args.iter().copied()))
}

#[test]
fn default_config_round_trips() {
    let cfg = RunConfig::default();
    assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(parse_config("").unwrap(), cfg);
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let cfg = parse_config("# header\n\nscenario = custom  # spinning\nspin = 0.25\nM_cap = 3.5\n").unwrap();
    assert_eq!(cfg.scenario, "custom");
    assert_eq!(cfg.spin, 0.25);
    assert_eq!(cfg.m_cap, Some(3.5));
    assert_eq!(parse_config("M_cap = auto").unwrap().m_cap, None);
}

#[test]
fn parse_errors_carry_line_numbers() {
    let line = |text: &str| match parse_config(text) {
        Err(Error::Parse { line, .. }) => line,
        other => panic!("{other:?}"),
    };
    assert_eq!(line("nr = 8\nbogus = 1\n"), 2);
    assert_eq!(line("nr = 8\n\ndt = fast\n"), 3);
    assert_eq!(line("nr = 8\nm = 4\nnr = 10\n"), 3);
    assert_eq!(line("just words"), 1);
    assert_eq!(line("sweep_param = nu"), 1);
    assert_eq!(line("sweep_values = 0.1, x"), 1);
}

#[test]
fn validation_names_the_field() {
    let field = |text: &str| match parse_config(text) {
        Err(Error::Validation { field, .. }) => field,
        other => panic!("{other:?}"),
    };
    assert_eq!(field("ntheta = 31"), "ntheta");
    assert_eq!(field("nr = 1"), "nr");
    assert_eq!(field("nu = 0"), "nu");
    assert_eq!(field("ecc = 1.0"), "ecc");
    assert_eq!(field("M_cap = -2"), "M_cap");
    assert_eq!(field("sweep_values = 0.1, -0.1"), "sweep_values");
    assert_eq!(field("T = 0.05\ndt = 0.03"), "dt");
    assert!(matches!(parse_config("scenario = vortex"), Err(Error::UnknownScenario(s)) if s == "vortex"));
}

#[test]
fn save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { scenario: "custom".into(), spin: -0.75, m_cap: Some(12.0), sweep_param: SweepParam::Dt, ..Default::default() };
    let p = write_config(dir.path(), &cfg);
    assert_eq!(load_config(&p).unwrap(), cfg);
    assert!(matches!(load_config(&dir.path().join("missing.conf")), Err(Error::Io(_))));
}

#[test]
fn shipped_configs_are_canonical() {
    let mut n = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "conf") {
            let text = fs::read_to_string(&p).unwrap();
            let cfg = parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            assert_eq!(cfg.to_text(), text, "{}", p.display());
            n += 1;
        }
    }
    assert!(n >= SCENARIOS.len());
}

#[test]
fn zero_eccentricity_is_the_disk() {
    assert_eq!(ellipse_map(0.0), [[1.0, 0.0], [0.0, 1.0]]);
    let e = ellipse_map(0.6);
    assert!((e[0][0] * e[1][1] - 1.0).abs() < 1e-15);
    // Axis ratio b/a = sqrt(1 - e²).
    assert!((e[1][1] / e[0][0] - 0.8).abs() < 1e-15);
    let disk = PolarGrid::new(8, 16).unwrap();
    let s = build_scenario(&RunConfig { scenario: "custom".into(), nr: 8, ntheta: 16, ecc: 0.0, ..Default::default() }).unwrap();
    for (a, b) in disk.points.iter().zip(&s.grid.points) {
        assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
    }
}

#[test]
fn scenarios_set_the_initial_velocity() {
    let cfg = RunConfig { scenario: "custom".into(), spin: 2.0, ..Default::default() };
    let s = build_scenario(&cfg).unwrap();
    for (k, x) in s.grid.points.iter().enumerate() {
        assert_eq!([s.u0[0][k], s.u0[1][k]], [-2.0 * x[1], 2.0 * x[0]]);
    }
    for name in ["equilibrium_disk", "perturbed_ellipse"] {
        let s = build_scenario(&RunConfig { scenario: name.into(), ..Default::default() }).unwrap();
        assert!(s.u0.iter().flatten().all(|v| *v == 0.0));
        assert!(s.manufactured.is_none());
    }
    let s = build_scenario(&RunConfig { scenario: "manufactured_linear".into(), ..Default::default() }).unwrap();
    assert!(s.manufactured.is_some());
}

#[test]
fn manufactured_solution_is_self_consistent() {
    let m = Manufactured;
    let h = 1e-3;
    for (t, x) in [(0.0, [0.3, -0.2]), (0.7, [-0.5, 0.4]), (1.9, [0.1, 0.8])] {
        for c in 0..2 {
            let wc = |p: [f64; 2]| m.velocity(p[0], x)[c];
            // Time derivatives through the first slot of a dummy point.
            let dt = fd_first(|p| wc([p[0], 0.0]), [t, 0.0], 0, h);
            assert!((dt - m.velocity_dt(t, x)[c]).abs() < 1e-10);
            let di = fd_first(|p| m.velocity_integral(p[0], x)[c], [t, 0.0], 0, h);
            assert!((di - m.velocity(t, x)[c]).abs() < 1e-10);
            let lap = fd_second(|p| m.velocity(t, p)[c], x, 0, h) + fd_second(|p| m.velocity(t, p)[c], x, 1, h);
            assert!((lap - m.velocity_laplacian(t, x)[c]).abs() < 1e-7);
            let gp = fd_first(|p| m.pressure(t, p), x, c, h);
            assert!((gp - m.pressure_grad(t, x)[c]).abs() < 1e-10);
        }
        let grad = |i: usize, k: usize| fd_first(|p| m.velocity(t, p)[i], x, k, h);
        assert!((grad(0, 0) + grad(1, 1)).abs() < 1e-10, "divergence");
        let def = m.velocity_def(t, x);
        for i in 0..2 {
            for k in 0..2 {
                assert!((def[i][k] - grad(i, k) - grad(k, i)).abs() < 1e-10);
            }
        }
        assert!(m.velocity_integral(0.0, x).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn export_is_deterministic() {
    let grid = PolarGrid::with_map(4, 8, ellipse_map(0.4)).unwrap();
    let mut traj = Trajectory::zeros(grid.npts(), 2, 0.5);
    for (n, v) in traj.velocity.iter_mut().enumerate() {
        *v = grid.sample_vec(|x| [x[0] * n as f64, -x[1] / 3.0]);
    }
    traj.pressure[1] = grid.sample(|x| x[0] * x[1] + 1.0 / 7.0);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    export_fields(&grid, &traj, a.path()).unwrap();
    export_fields(&grid, &traj, b.path()).unwrap();
    for name in ["columns.txt", "snapshot_00000.csv", "snapshot_00001.csv", "snapshot_00002.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let text = fs::read_to_string(a.path().join("snapshot_00001.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "i,j,t,x,y,vx,vy,p");
    assert_eq!(lines.len(), grid.npts() + 1);
    // Last row is the final boundary node.
    let last: Vec<f64> = lines[grid.npts()].split(',').skip(2).map(|s| s.parse().unwrap()).collect();
    let k = grid.idx(3, 7);
    let x = grid.points[k];
    let want = [0.5, x[0], x[1], x[0], -x[1] / 3.0, x[0] * x[1] + 1.0 / 7.0];
    for (g, w) in last.iter().zip(want) {
        assert!((g - w).abs() <= 1e-11 * w.abs().max(1.0));
    }
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { scenario: "perturbed_ellipse".into(), t_final: 0.004, nr: 8, ntheta: 16, m: 8, ..Default::default() };
    let conf = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    assert_eq!(run(&["run", "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    for f in ["columns.txt", "config.txt", "energy.csv", "energy_summary.txt", "manifest.txt", "fields/columns.txt", "fields/snapshot_00004.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let written = load_config(&out.join("config.txt")).unwrap();
    assert_eq!(written.output_dir, out);
    let energy = fs::read_to_string(out.join("energy.csv")).unwrap();
    assert_eq!(energy.lines().count(), 6);
}

#[test]
fn manufactured_run_writes_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { scenario: "manufactured_linear".into(), t_final: 0.01, output_dir: dir.path().join("m"), ..Default::default() };
    let conf = write_config(dir.path(), &cfg);
    assert_eq!(run(&["run", "--config", conf.to_str().unwrap()]), 0);
    let csv = fs::read_to_string(dir.path().join("m/linear_errors.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    let modes = fs::read_to_string(dir.path().join("m/modes.csv")).unwrap();
    let rows: Vec<&str> = modes.lines().collect();
    assert_eq!(rows[0], "t,k,lambda_k,d_k");
    assert_eq!(rows.len(), 1 + 11 * cfg.m);
    // d starts at zero and row order is time-major.
    assert!(rows[1].starts_with("0.000000000000e0,0,") && rows[1].ends_with(",0.000000000000e0"));
    assert!(rows[cfg.m + 1].contains(",0,"));
    let manifest = fs::read_to_string(dir.path().join("m/manifest.txt")).unwrap();
    let err: f64 = manifest
        .lines()
        .find_map(|l| l.strip_prefix("result.velocity_rel_error = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn sweep_tabulates_each_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        scenario: "perturbed_ellipse".into(),
        nr: 8,
        ntheta: 16,
        m: 8,
        dt: 2e-3,
        sweep_values: vec![0.004, 0.008],
        output_dir: dir.path().join("s"),
        ..Default::default()
    };
    let conf = write_config(dir.path(), &cfg);
    assert_eq!(run(&["sweep", "--config", conf.to_str().unwrap()]), 0);
    let csv = fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "value,rho,outer_iterations,inner_iterations,max_energy_residual");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.004,") && lines[2].starts_with("0.008,"));
}

#[test]
fn verify_passes_with_defaults() {
    assert_eq!(run(&["verify", "--seed", "7"]), 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "nr = 8\nbogus = 3\n").unwrap();
    assert_eq!(run(&["run", "--config", bad.to_str().unwrap()]), 2);
    assert_eq!(run(&["run", "--config", dir.path().join("none.conf").to_str().unwrap()]), 2);
    assert_eq!(run(&["launch"]), 2);
    assert_eq!(run(&["--help"]), 0);
    // Solver failure: the spinning ellipse loses geometric control.
    let cfg = RunConfig { scenario: "custom".into(), spin: 10.0, t_final: 0.2, output_dir: dir.path().join("o"), ..Default::default() };
    let conf = write_config(dir.path(), &cfg);
    assert_eq!(run(&["run", "--config", conf.to_str().unwrap()]), 1);
    let sweep = RunConfig { scenario: "manufactured_linear".into(), output_dir: dir.path().join("o"), ..Default::default() };
    let conf = write_config(dir.path(), &sweep);
    assert_eq!(run(&["sweep", "--config", conf.to_str().unwrap()]), 2);
}

#[test]
fn binary_reports_errors_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "ntheta = 7\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_capillary")).args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ntheta"), "{err}");
    assert!(out.stdout.is_empty());
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        (0usize..4, 2usize..40, 4usize..40, 1usize..30),
        (1u32..50, 1e-3f64..10.0, 1e-3f64..10.0, 1e-12f64..1e-2),
        (proptest::option::of(1e-3f64..1e3), any::<u64>(), 0.0f64..0.99, -5.0f64..5.0),
        (any::<bool>(), proptest::collection::vec(1e-4f64..1.0, 1..5), "[a-z][a-z0-9_/]{0,12}"),
    )
        .prop_map(|((s, nr, half, m), (steps, nu, sigma, tol), (cap, seed, ecc, spin), (dtp, sweep, dir))| {
            let dt = 1e-3;
            RunConfig {
                scenario: SCENARIOS[s].into(),
                nr,
                ntheta: 2 * half,
                m,
                t_final: steps as f64 * dt,
                dt,
                nu,
                sigma,
                inner_tol: tol,
                inner_max_iter: nr,
                outer_max_iter: m,
                m_cap: cap,
                t_max: 1.0,
                output_dir: PathBuf::from(dir),
                seed,
                ecc,
                spin,
                sweep_param: if dtp { SweepParam::Dt } else { SweepParam::T },
                sweep_values: sweep,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_text_round_trips(cfg in arb_config()) {
        let text = cfg.to_text();
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}
