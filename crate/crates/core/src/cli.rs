//! Scenario files, command dispatch and artifact output for the `herdlab` binary.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{pursuer_position, rhs_fixed_cartesian};
use crate::equilibria::{cardano_roots, solve_circular, solve_spiral, stable_equilibrium};
use crate::integrate::{detect_convergence, integrate, IntegratorSettings, Method, Trajectory};
use crate::model::{check_admissibility, normalize_angle, FixedCartesian, Frame, Mode, ModelError, PursuitParams, RotatingPolar};
use crate::roa::{
    brute_force_region, default_kappa_grid, pi_roa, run_outcome, stable_region, stable_region_spiral, verify_pi_roa, Anchor, OptimizeOptions,
    Outcome, OutcomeOptions, PolarGrid,
};
use crate::stability::{classify, coupled_jacobian, eigenvalues_circular, jacobian_circular};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("{0}")]
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(_) => 2,
            _ => 1,
        }
    }

    fn validation(field: &str, reason: &str) -> Self {
        CliError::Validation { field: field.to_string(), reason: reason.to_string() }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidParam { field, reason } => CliError::Validation { field: field.to_string(), reason },
        }
    }
}

fn model_err(e: impl std::fmt::Display) -> CliError {
    CliError::Model(e.to_string())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorBlock {
    /// `"rk4"` (default) or `"rk45"`.
    pub method: Option<String>,
    pub step: Option<f64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_step: Option<f64>,
    pub t_end: Option<f64>,
    pub record_every: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceBlock {
    pub tol: Option<f64>,
    pub window: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoaBlock {
    pub samples: Option<usize>,
    pub margin: Option<f64>,
    pub max_semi_axis: Option<f64>,
    pub max_iter: Option<usize>,
    pub restarts: Option<usize>,
    pub psi_range: Option<[f64; 2]>,
    /// Initial conditions integrated on the circle `r = kappa` and on the ellipse boundary.
    pub verify_points: Option<usize>,
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub kappa_points: Option<usize>,
    pub kappa_grid: Option<Vec<f64>>,
    pub omegas: Option<Vec<f64>>,
    pub grid: Option<PolarGrid>,
    pub anchor: Option<Anchor>,
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiRoaBlock {
    pub theta_samples: Option<usize>,
    pub radius_samples: Option<usize>,
    pub verify_angles: Option<usize>,
    pub verify_phases: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// File stem for every artifact; defaults to the command name.
    pub name: Option<String>,
    pub polyline_vertices: Option<usize>,
}

/// The on-disk scenario schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub mode: Mode,
    pub k: f64,
    #[serde(default)]
    pub k1: Option<f64>,
    #[serde(rename = "R")]
    pub pursuer_radius: f64,
    pub omega: f64,
    pub evaders: Vec<[f64; 2]>,
    #[serde(default)]
    pub integrator: IntegratorBlock,
    #[serde(default)]
    pub convergence: ConvergenceBlock,
    #[serde(default)]
    pub roa: RoaBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub pi_roa: PiRoaBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// A validated scenario with every default filled in.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub params: PursuitParams,
    /// Initial positions; index 0 is the farthest from the target.
    pub evaders: Vec<FixedCartesian>,
    pub integrator: IntegratorSettings,
    pub tol: f64,
    pub window: f64,
    pub file: ScenarioFile,
    /// The configuration exactly as parsed, embedded in reports.
    pub raw: Value,
    pub notices: Vec<String>,
}

impl ScenarioConfig {
    fn optimize_options(&self) -> OptimizeOptions {
        let r = &self.file.roa;
        let d = OptimizeOptions::default();
        OptimizeOptions {
            samples: r.samples.unwrap_or(d.samples),
            margin: r.margin.unwrap_or(d.margin),
            max_semi_axis: r.max_semi_axis.unwrap_or(10.0 * self.params.pursuer_radius),
            max_iter: r.max_iter.unwrap_or(d.max_iter),
            restarts: r.restarts.unwrap_or(d.restarts),
            refine: d.refine,
        }
    }

    fn outcome_options(&self, t_end: Option<f64>) -> OutcomeOptions {
        let d = OutcomeOptions::for_params(&self.params);
        OutcomeOptions { tol: self.tol, window: self.window, t_end: t_end.unwrap_or(d.t_end), ..d }
    }

    fn psi_range(&self) -> (f64, f64) {
        let [a, b] = self.file.roa.psi_range.unwrap_or([-std::f64::consts::PI, std::f64::consts::PI]);
        (a, b)
    }

    fn polyline_vertices(&self) -> usize {
        self.file.output.polyline_vertices.unwrap_or(256)
    }
}

/// Parses a scenario from JSON text.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, CliError> {
    let parse_err = |e: serde_json::Error| CliError::Parse { line: e.line(), column: e.column(), message: e.to_string() };
    let raw: Value = serde_json::from_str(text).map_err(parse_err)?;
    let file: ScenarioFile = serde_json::from_str(text).map_err(parse_err)?;
    resolve(file, raw)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    parse_scenario(&text)
}

fn resolve(file: ScenarioFile, raw: Value) -> Result<ScenarioConfig, CliError> {
    let mut notices = Vec::new();
    if file.evaders.is_empty() {
        return Err(CliError::validation("evaders", "must be non-empty"));
    }
    if file.evaders.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::validation("evaders", "coordinates must be finite"));
    }
    let mut evaders: Vec<FixedCartesian> = file.evaders.iter().map(|p| FixedCartesian::new(p[0], p[1])).collect();
    let far = (0..evaders.len()).fold(0, |best, i| if evaders[i].norm() > evaders[best].norm() { i } else { best });
    if far != 0 {
        let e = evaders.remove(far);
        evaders.insert(0, e);
        notices.push(format!("evader {far} is farthest from the target and was moved to index 0"));
    }
    let kappa = evaders[0].norm();

    let k1 = match (file.mode, file.k1) {
        (Mode::Spiral, None) => return Err(CliError::validation("k1", "required in spiral mode")),
        (_, Some(k1)) => k1,
        (Mode::Circular, None) => 0.0,
    };
    let params = PursuitParams { k: file.k, k1, pursuer_radius: file.pursuer_radius, omega: file.omega, kappa, mode: file.mode };
    params.validate()?;
    let adm = check_admissibility(&params);
    match params.mode {
        Mode::Spiral if !adm.spiral_ok => notices.push(match adm.kappa_bound {
            Some(c) => format!("kappa = {kappa} is not below the admissible bound {c}; the equilibrium may not be unique"),
            None => "2 k1^2 R^2 <= 1: the equilibrium may not be unique".to_string(),
        }),
        Mode::Circular if !adm.circular_ok => notices.push(format!("k/(omega R^3) = {} admits no equilibrium", adm.ratio)),
        _ => {}
    }

    let ib = &file.integrator;
    let period = params.period();
    let t_end = ib.t_end.unwrap_or(60.0 * period);
    let record_every = ib.record_every.unwrap_or(0.02 * period);
    let method = match ib.method.as_deref().unwrap_or("rk4") {
        "rk4" => Method::Rk4 { step: ib.step.unwrap_or(1e-3 * period) },
        "rk45" => Method::Rk45 {
            rel_tol: ib.rel_tol.unwrap_or(1e-9),
            abs_tol: ib.abs_tol.unwrap_or(1e-12),
            max_step: ib.max_step.unwrap_or(0.05 * period),
        },
        other => return Err(CliError::validation("integrator.method", &format!("unknown method `{other}`; expected rk4 or rk45"))),
    };
    let integrator = IntegratorSettings { method, t_end, record_every };
    integrator.validate().map_err(|e| CliError::validation("integrator", &e.to_string()))?;

    let tol = file.convergence.tol.unwrap_or(1e-3);
    let window = file.convergence.window.unwrap_or(period);
    if !(tol > 0.0) {
        return Err(CliError::validation("convergence.tol", "must be > 0"));
    }
    if !(window >= 0.0) {
        return Err(CliError::validation("convergence.window", "must be >= 0"));
    }
    if let Some(g) = &file.sweep.grid {
        g.validate().map_err(|e| CliError::validation("sweep.grid", &e.to_string()))?;
    }
    Ok(ScenarioConfig { params, evaders, integrator, tol, window, file, raw, notices })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    Equilibria,
    Stability,
    Roa,
    Sweep,
    PiRoa,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Equilibria => "equilibria",
            Command::Stability => "stability",
            Command::Roa => "roa",
            Command::Sweep => "sweep",
            Command::PiRoa => "pi-roa",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "herdlab", version, about = "Single-pursuer multi-evader herding: simulation, equilibria, stability and regions of attraction")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for sweeps; HERDLAB_THREADS takes precedence.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Machine-readable record of one invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub notices: Vec<String>,
    pub params: Option<PursuitParams>,
    pub files: Vec<String>,
    pub results: Value,
    pub config: Value,
}

pub fn config_hash(raw: &Value) -> String {
    let digest = Sha256::digest(raw.to_string().as_bytes());
    digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

struct Artifacts<'a> {
    dir: &'a Path,
    stem: String,
    files: Vec<String>,
    /// Results gathered before a failure, reported alongside the error.
    partial: Option<Value>,
}

impl Artifacts<'_> {
    fn write(&mut self, suffix: &str, contents: &str) -> Result<(), CliError> {
        let name = format!("{}{}", self.stem, suffix);
        let path = self.dir.join(&name);
        fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
        self.files.push(name);
        Ok(())
    }
}

/// Writes a trajectory in fixed Cartesian coordinates as CSV.
pub fn trajectory_csv(traj: &Trajectory, params: &PursuitParams) -> String {
    let n = traj.n();
    let mut out = String::from("t,x_p,y_p");
    for i in 0..n {
        let _ = write!(out, ",x_e{i},y_e{i},r_e{i},psi_e{i}");
    }
    out.push('\n');
    for (&t, s) in traj.times.iter().zip(&traj.states) {
        let p = pursuer_position(t, s[0].hypot(s[1]), params);
        out.push_str(&fmt(t));
        for v in [p.x, p.y] {
            out.push(',');
            out.push_str(&fmt(v));
        }
        for e in s.chunks_exact(2) {
            let r = e[0].hypot(e[1]);
            let psi = normalize_angle(e[1].atan2(e[0]) - params.omega * t);
            for v in [e[0], e[1], r, psi] {
                out.push(',');
                out.push_str(&fmt(v));
            }
        }
        out.push('\n');
    }
    out
}

fn polyline_csv(header: &str, rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = format!("{header}\n");
    for row in rows {
        let line: Vec<String> = row.into_iter().map(fmt).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn simulate(cfg: &ScenarioConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let p = cfg.params;
    let s0: Vec<f64> = cfg.evaders.iter().flat_map(|e| [e.x, e.y]).collect();
    let traj = integrate(|t, s, out| rhs_fixed_cartesian(&p, t, s, out), Frame::FixedCartesian, 0.0, &s0, &cfg.integrator).map_err(model_err)?;
    art.write(".csv", &trajectory_csv(&traj, &p))?;

    let (t_last, last) = traj.last();
    let final_states: Vec<Value> = last
        .chunks_exact(2)
        .map(|e| {
            let q = FixedCartesian::new(e[0], e[1]).to_rotating(t_last, p.omega).to_polar();
            json!({ "x": e[0], "y": e[1], "r": q.r, "psi": q.psi })
        })
        .collect();
    let mut results = json!({
        "termination": traj.termination,
        "samples": traj.len(),
        "t_final": t_last,
        "final": final_states,
    });
    if let Some(e) = traj.error {
        results["model_error"] = json!(e.to_string());
        art.partial = Some(results);
        return Err(CliError::Model(format!("integration stopped at t = {t_last}: {e}")));
    }
    if let Ok(eq) = stable_equilibrium(&p) {
        let rot = traj.to_frame(Frame::RotatingPolar, p.omega);
        let window = cfg.window.min(rot.span());
        results["equilibrium"] = json!(eq);
        results["convergence"] = json!(detect_convergence(&rot, &[eq.polar()], cfg.tol, window).map_err(model_err)?);
    }
    Ok(results)
}

fn equilibria(cfg: &ScenarioConfig) -> Result<Value, CliError> {
    let p = cfg.params;
    let adm = check_admissibility(&p);
    match p.mode {
        Mode::Spiral => {
            let sol = solve_spiral(&p).map_err(model_err)?;
            Ok(json!({ "admissibility": adm, "equilibria": sol.equilibria, "warning": sol.warning }))
        }
        Mode::Circular => {
            let sol = solve_circular(&p).map_err(model_err)?;
            let (c1, c2, c3) = cardano_roots(p.k, p.pursuer_radius, p.omega);
            Ok(json!({
                "admissibility": adm,
                "roots": sol.roots,
                "cardano": [[c1.re, c1.im], [c2.re, c2.im], [c3.re, c3.im]],
                "r_s1": sol.roots.r_s1,
                "r_s2": sol.roots.r_s2,
                "outer": sol.outer,
                "inner": sol.inner,
            }))
        }
    }
}

fn stability(cfg: &ScenarioConfig) -> Result<Value, CliError> {
    let p = cfg.params;
    let n = cfg.evaders.len();
    let matrix = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> { (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect() };
    match p.mode {
        Mode::Spiral => {
            let sol = solve_spiral(&p).map_err(model_err)?;
            let entries = sol
                .equilibria
                .iter()
                .map(|eq| {
                    let verdict = classify(&p, eq, n).map_err(model_err)?;
                    let jac = coupled_jacobian(&p, eq, n).map_err(model_err)?;
                    Ok(json!({ "equilibrium": eq, "evaders": n, "verdict": verdict, "jacobian": matrix(&jac) }))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok(json!({ "equilibria": entries, "warning": sol.warning }))
        }
        Mode::Circular => {
            let sol = solve_circular(&p).map_err(model_err)?;
            let entry = |eq: &crate::equilibria::Equilibrium| -> Result<Value, CliError> {
                let verdict = classify(&p, eq, n).map_err(model_err)?;
                let (l1, l2) = eigenvalues_circular(&p, eq.r_star).map_err(model_err)?;
                let closed = jacobian_circular(&p, eq.r_star, eq.psi_star);
                let numeric = coupled_jacobian(&p, eq, 1).map_err(model_err)?;
                Ok(json!({
                    "equilibrium": eq,
                    "verdict": verdict,
                    "closed_form_eigenvalues": [l1, l2],
                    "jacobian_closed_form": [[closed[(0, 0)], closed[(0, 1)]], [closed[(1, 0)], closed[(1, 1)]]],
                    "jacobian_numeric": matrix(&numeric),
                }))
            };
            Ok(json!({ "inner": entry(&sol.inner)?, "outer": entry(&sol.outer)? }))
        }
    }
}

fn roa(cfg: &ScenarioConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let p = cfg.params;
    let opts = cfg.optimize_options();
    let (eq, region, shape) = stable_region(&p, &opts).map_err(model_err)?;
    let verts = region.boundary_polyline(cfg.polyline_vertices());
    art.write("_boundary.csv", &polyline_csv("u,v", verts.iter().map(|v| v.to_vec())))?;
    let mut results = json!({
        "equilibrium": eq,
        "region": region,
        "semi_axes": region.semi_axes(),
        "optimizer_iterations": shape.det_history.len(),
    });
    let psi_range = cfg.psi_range();
    if p.mode == Mode::Spiral {
        let (psi, v) = region.max_on_circle(p.kappa, psi_range);
        results["initial_circle"] = json!({ "radius": p.kappa, "psi_range": psi_range, "max_value": v, "max_at_psi": psi, "contained": v <= 1.0 });
    }
    let m = cfg.file.roa.verify_points.unwrap_or(0);
    if m > 0 {
        let oo = cfg.outcome_options(cfg.file.roa.t_end);
        let target = [eq.polar()];
        let count = |starts: Vec<[f64; 2]>| -> usize {
            starts.iter().filter(|s| run_outcome(&p, &s[..], &target, &oo).outcome == Outcome::Converged).count()
        };
        let on_boundary = count(region.boundary_polyline(m));
        results["verification"] = json!({ "boundary_points": m, "boundary_converged": on_boundary });
        if p.mode == Mode::Spiral {
            let (a, b) = psi_range;
            let starts = (0..m)
                .map(|i| {
                    let c = RotatingPolar { r: p.kappa, psi: a + (b - a) * i as f64 / m as f64 }.to_cartesian();
                    [c.u, c.v]
                })
                .collect();
            results["verification"]["circle_converged"] = json!(count(starts));
        }
    }
    Ok(results)
}

fn sweep(cfg: &ScenarioConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let p = cfg.params;
    let sb = &cfg.file.sweep;
    if let Some(grid) = sb.grid {
        let oo = cfg.outcome_options(sb.t_end);
        let map = brute_force_region(&p, &grid, sb.anchor, &oo).map_err(model_err)?;
        let radii = grid.radii();
        let angles = grid.angles();
        let mut csv = String::from("r,psi,outcome,t_converged\n");
        for (idx, (o, tc)) in map.outcomes.iter().zip(&map.t_converged).enumerate() {
            let (ir, ip) = (idx / grid.npsi, idx % grid.npsi);
            let label = serde_json::to_value(o).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let tc = tc.map(fmt).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{label},{tc}", fmt(radii[ir]), fmt(angles[ip]));
        }
        art.write("_map.csv", &csv)?;
        let counts = [Outcome::Converged, Outcome::Diverged, Outcome::Singular, Outcome::Undecided].map(|o| map.count(o));
        return Ok(json!({
            "kind": "brute_force",
            "grid": grid,
            "anchor": sb.anchor,
            "options": oo,
            "converged": counts[0],
            "diverged": counts[1],
            "singular": counts[2],
            "undecided": counts[3],
        }));
    }
    match p.mode {
        Mode::Spiral => {
            let grid = match &sb.kappa_grid {
                Some(g) => g.clone(),
                None => default_kappa_grid(&p, sb.kappa_points.unwrap_or(64)).map_err(model_err)?,
            };
            let sw = stable_region_spiral(&p, &grid, cfg.psi_range(), &cfg.optimize_options()).map_err(model_err)?;
            let m = cfg.polyline_vertices();
            let rows = sw
                .entries
                .iter()
                .filter_map(|e| e.region.as_ref().map(|r| (e.kappa, r)))
                .flat_map(|(kappa, r)| r.boundary_polyline(m).into_iter().map(move |v| vec![kappa, v[0], v[1]]))
                .collect::<Vec<_>>();
            art.write("_boundaries.csv", &polyline_csv("kappa,u,v", rows.into_iter()))?;
            Ok(json!({ "kind": "kappa", "sweep": sw }))
        }
        Mode::Circular => {
            let omegas = sb.omegas.clone().unwrap_or_else(|| vec![1.0, 10.0, 100.0, 1000.0, 10000.0]);
            let mut rows = Vec::new();
            let mut entries = Vec::new();
            for &w in &omegas {
                let q = p.with_omega(w);
                q.validate()?;
                let sol = solve_circular(&q).map_err(model_err)?;
                let (a, b) = eigenvalues_circular(&q, sol.roots.r_s2).map_err(model_err)?;
                rows.push(vec![w, sol.roots.r_s1, sol.roots.r_s2, sol.roots.r_s3, sol.outer.psi_star, sol.inner.psi_star, a.re, a.im, b.re, b.im]);
                entries.push(json!({ "omega": w, "roots": sol.roots, "inner": sol.inner, "outer": sol.outer, "inner_eigenvalues": [a, b] }));
            }
            art.write("_omega.csv", &polyline_csv("omega,r_s1,r_s2,r_s3,psi_s1,psi_s2,re_l1,im_l1,re_l2,im_l2", rows.into_iter()))?;
            Ok(json!({ "kind": "omega", "entries": entries }))
        }
    }
}

fn pi_roa_cmd(cfg: &ScenarioConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let p = cfg.params;
    let b = &cfg.file.pi_roa;
    let res = pi_roa(&p, b.theta_samples.unwrap_or(64), b.radius_samples.unwrap_or(256), &cfg.optimize_options()).map_err(model_err)?;
    let m = cfg.polyline_vertices();
    let ellipse = res.region.boundary_polyline(m);
    let rows = ellipse.iter().map(|v| vec![0.0, v[0], v[1]]).chain((0..m).map(|i| {
        let t = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
        vec![1.0, res.r_max * t.cos(), res.r_max * t.sin()]
    }));
    art.write("_boundary.csv", &polyline_csv("curve,u,v", rows))?;
    let mut results = json!({ "pi_roa": res });
    let (angles, phases) = (b.verify_angles.unwrap_or(32), b.verify_phases.unwrap_or(64));
    if angles > 0 && phases > 0 {
        let check = verify_pi_roa(&p, res.r_max, angles, phases, &cfg.outcome_options(None)).map_err(model_err)?;
        results["verification"] = json!(check);
    }
    Ok(results)
}

/// Runs one command; the report is returned even when the command fails.
pub fn run(command: Command, cfg: &ScenarioConfig, out_dir: &Path) -> RunReport {
    let start = Instant::now();
    let stem = cfg.file.output.name.clone().unwrap_or_else(|| command.name().replace('-', "_"));
    let mut art = Artifacts { dir: out_dir, stem, files: Vec::new(), partial: None };
    let outcome = match command {
        Command::Simulate => simulate(cfg, &mut art),
        Command::Equilibria => equilibria(cfg),
        Command::Stability => stability(cfg),
        Command::Roa => roa(cfg, &mut art),
        Command::Sweep => sweep(cfg, &mut art),
        Command::PiRoa => pi_roa_cmd(cfg, &mut art),
    };
    let (status, exit_code, error, results) = match outcome {
        Ok(v) => ("ok", 0, None, v),
        Err(e) => ("error", e.exit_code(), Some(e.to_string()), art.partial.take().unwrap_or(Value::Null)),
    };
    RunReport {
        command: command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: status.to_string(),
        exit_code,
        error,
        config_hash: config_hash(&cfg.raw),
        wall_time_s: start.elapsed().as_secs_f64(),
        notices: cfg.notices.clone(),
        params: Some(cfg.params),
        files: art.files,
        results,
        config: cfg.raw.clone(),
    }
}

fn write_report(out_dir: &Path, name: &str, report: &RunReport) -> Result<(), CliError> {
    let path = out_dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(report).map_err(model_err)?;
    fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })
}

fn configure_threads(cli: Option<usize>) {
    let env = std::env::var("HERDLAB_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok());
    if let Some(n) = env.or(cli).filter(|&n| n > 0) {
        // A second initialization in the same process is harmless; keep the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads(args.threads);
    if let Err(e) = fs::create_dir_all(&args.out_dir) {
        eprintln!("error: cannot create {}: {e}", args.out_dir.display());
        return 1;
    }
    let name = args.command.name().replace('-', "_");
    let cfg = match load_scenario(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            let report = RunReport {
                command: args.command.name().to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                status: "error".to_string(),
                exit_code: e.exit_code(),
                error: Some(e.to_string()),
                config_hash: String::new(),
                wall_time_s: 0.0,
                notices: Vec::new(),
                params: None,
                files: Vec::new(),
                results: Value::Null,
                config: Value::Null,
            };
            let _ = write_report(&args.out_dir, &name, &report);
            return e.exit_code();
        }
    };
    for n in &cfg.notices {
        eprintln!("notice: {n}");
    }
    let report = run(args.command, &cfg, &args.out_dir);
    let stem = cfg.file.output.name.clone().unwrap_or(name);
    if let Err(e) = write_report(&args.out_dir, &stem, &report) {
        eprintln!("error: {e}");
        return 1;
    }
    match &report.error {
        Some(msg) => eprintln!("error: {msg}"),
        None => println!("{}: ok ({:.3} s), report {}", report.command, report.wall_time_s, args.out_dir.join(format!("{stem}.json")).display()),
    }
    report.exit_code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_defaults() {
        let cfg = parse_scenario(r#"{"mode": "circular", "k": 1, "R": 2, "omega": 1, "evaders": [[0.5, 0]]}"#).unwrap();
        assert_eq!(cfg.params.kappa, 0.5);
        assert_eq!(cfg.params.k1, 0.0);
        assert!(cfg.notices.is_empty());
    }

    #[test]
    fn reindexes_farthest_evader() {
        let cfg = parse_scenario(r#"{"mode": "circular", "k": 1, "R": 2, "omega": 1, "evaders": [[0.1, 0], [0, 0.5], [0.2, 0]]}"#).unwrap();
        assert_eq!(cfg.evaders[0], FixedCartesian::new(0.0, 0.5));
        assert_eq!(cfg.evaders[1], FixedCartesian::new(0.1, 0.0));
        assert_eq!(cfg.notices.len(), 1);
    }

    #[test]
    fn validation_and_parse_errors() {
        match parse_scenario(r#"{"mode": "circular", "k": 1, "R": 2, "omega": 0, "evaders": [[0.5, 0]]}"#) {
            Err(CliError::Validation { field, reason }) => assert_eq!((field.as_str(), reason.as_str()), ("omega", "must be > 0")),
            other => panic!("{other:?}"),
        }
        match parse_scenario("{\n  \"mode\": \"circular\",\n  \"k\": 1,,\n}") {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_scenario(r#"{"mode": "circular", "k": 1, "R": 2, "omega": 1, "evaders": [[0.5, 0]], "bogus": 1}"#),
            Err(CliError::Parse { .. })
        ));
        assert!(matches!(
            parse_scenario(r#"{"mode": "spiral", "k": 1, "R": 2, "omega": 1, "evaders": [[0.5, 0]]}"#),
            Err(CliError::Validation { .. })
        ));
    }

    #[test]
    fn hash_is_stable() {
        let v: Value = serde_json::from_str(r#"{"b": 1, "a": [1.5]}"#).unwrap();
        assert_eq!(config_hash(&v), config_hash(&v.clone()));
        assert_eq!(config_hash(&v).len(), 64);
    }
}
