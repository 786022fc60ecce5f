//! Region-of-attraction estimates.
//!
//! A quadratic Lyapunov candidate `V(w) = w^T A w` is built around the stable
//! equilibrium of the single-evader rotating system, shifted so that the
//! equilibrium sits at the origin. The sublevel set `{V <= 1}` is certified
//! when the field points strictly inward (`f(w)^T A w < 0`) along its
//! boundary, which is checked on a dense sample of boundary points.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{pursuer_radius, rhs_rotating_cartesian, DynamicsError};
use crate::equilibria::{solve_spiral, stable_equilibrium, Equilibrium, EquilibriumError};
use crate::integrate::{integrate_until, ConvergenceMonitor, IntegratorSettings, Termination};
use crate::model::{check_admissibility, spiral_kappa_bound, Frame, Mode, PursuitParams, RotatingCartesian, RotatingPolar};
use crate::numeric::{brent, golden_max, linspace, nelder_mead};
use crate::stability::jacobian_numeric;

/// Rounding allowance for `V <= 1` membership tests.
const CONTAINS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoaError {
    #[error("linearization is not Hurwitz (trace {trace}, det {det})")]
    NotHurwitz { trace: f64, det: f64 },
    #[error("no multiple of the seed ellipse satisfies the boundary condition")]
    SeedInfeasible,
    #[error("optimized ellipse fails the dense boundary check: f^T A w = {worst:e} at theta = {theta}")]
    Certification { worst: f64, theta: f64 },
    #[error("the target point lies outside the stable ellipse; no pursuer-independent disk exists")]
    EmptyIntersection,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("operation requires {0} mode")]
    WrongMode(&'static str),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// A planar vector field in equilibrium-centred coordinates.
pub trait PlanarField {
    fn eval(&self, w: [f64; 2]) -> Result<[f64; 2], DynamicsError>;

    /// Points (in the same coordinates) where the field is singular; no
    /// certified ellipse may contain them.
    fn singular_points(&self) -> &[[f64; 2]] {
        &[]
    }
}

impl<F: Fn([f64; 2]) -> [f64; 2]> PlanarField for F {
    fn eval(&self, w: [f64; 2]) -> Result<[f64; 2], DynamicsError> {
        Ok(self(w))
    }
}

/// Single-evader rotating Cartesian dynamics shifted so that `center` is the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedField {
    pub params: PursuitParams,
    pub center: RotatingCartesian,
    singular: Vec<[f64; 2]>,
}

impl ShiftedField {
    pub fn new(params: PursuitParams, eq: &Equilibrium) -> Self {
        let center = eq.cartesian();
        // The evader coincides with the pursuer only on the positive `u` axis,
        // where `u = R exp(k1 (u - kappa))`.
        let h = |u: f64| u - pursuer_radius(u, &params);
        let grid = linspace(1e-9, 50.0 * params.pursuer_radius, 20_001);
        let singular = grid
            .windows(2)
            .filter(|w| h(w[0]).signum() != h(w[1]).signum())
            .filter_map(|w| brent(h, w[0], w[1], 1e-14, 200))
            .map(|u| [u - center.u, -center.v])
            .collect();
        Self { params, center, singular }
    }

    pub fn jacobian(&self) -> Result<Matrix2<f64>, DynamicsError> {
        let j = jacobian_numeric(
            |w: &[f64], out: &mut [f64]| {
                let f = self.eval([w[0], w[1]])?;
                out.copy_from_slice(&f);
                Ok(())
            },
            &[0.0, 0.0],
            None,
        )?;
        Ok(Matrix2::new(j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]))
    }
}

impl PlanarField for ShiftedField {
    fn eval(&self, w: [f64; 2]) -> Result<[f64; 2], DynamicsError> {
        let s = [w[0] + self.center.u, w[1] + self.center.v];
        let mut out = [0.0; 2];
        rhs_rotating_cartesian(&self.params, &s, &mut out)?;
        Ok(out)
    }

    fn singular_points(&self) -> &[[f64; 2]] {
        &self.singular
    }
}

/// The origin-shifted field evaluated at `w`.
pub fn shifted_rhs(w: [f64; 2], params: &PursuitParams, eq: &Equilibrium) -> Result<[f64; 2], DynamicsError> {
    let c = eq.cartesian();
    let mut out = [0.0; 2];
    rhs_rotating_cartesian(params, &[w[0] + c.u, w[1] + c.v], &mut out)?;
    Ok(out)
}

/// Solves `A J + J^T A = -I` for symmetric `A`.
pub fn lyapunov_solve(j: &Matrix2<f64>) -> Result<Matrix2<f64>, RoaError> {
    let (trace, det) = (j.trace(), j.determinant());
    if !(trace < 0.0 && det > 0.0) {
        return Err(RoaError::NotHurwitz { trace, det });
    }
    let (j11, j12, j21, j22) = (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]);
    let m = Matrix3::new(2.0 * j11, 2.0 * j21, 0.0, j12, j11 + j22, j21, 0.0, 2.0 * j12, 2.0 * j22);
    let rhs = Vector3::new(-1.0, 0.0, -1.0);
    let x = m.lu().solve(&rhs).ok_or(RoaError::NotHurwitz { trace, det })?;
    Ok(Matrix2::new(x[0], x[1], x[1], x[2]))
}

/// Lyapunov solution scaled to unit largest eigenvalue.
pub fn lyapunov_seed(j: &Matrix2<f64>) -> Result<Matrix2<f64>, RoaError> {
    let a = lyapunov_solve(j)?;
    let (_, hi) = sym_eigen(&a);
    Ok(a / hi)
}

/// Eigenvalues `(low, high)` of a symmetric 2x2 matrix.
fn sym_eigen(a: &Matrix2<f64>) -> (f64, f64) {
    let m = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let d = (0.5 * (a[(0, 0)] - a[(1, 1)])).hypot(a[(0, 1)]);
    (m - d, m + d)
}

fn from_params(x: &[f64]) -> Matrix2<f64> {
    Matrix2::new(x[0], x[1], x[1], x[2])
}

/// `L^{-T}` for the Cholesky factor `A = L L^T`, so that
/// `w = L^{-T} (cos t, sin t)` traces `w^T A w = 1`.
fn boundary_map(a: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let l11 = a[(0, 0)].sqrt();
    let l21 = a[(1, 0)] / l11;
    let l22 = (a[(1, 1)] - l21 * l21).sqrt();
    if !(l11 > 0.0 && l22 > 0.0) {
        return None;
    }
    Some(Matrix2::new(1.0 / l11, -l21 / (l11 * l22), 0.0, 1.0 / l22))
}

fn boundary_point(map: &Matrix2<f64>, theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [map[(0, 0)] * c + map[(0, 1)] * s, map[(1, 1)] * s]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    /// Boundary samples used by the optimizer.
    pub samples: usize,
    /// Relative margin: the boundary condition is `f^T A w <= -margin |w|^2`.
    pub margin: f64,
    /// Largest admissible semi-axis; bounds the search when the field is
    /// inward everywhere.
    pub max_semi_axis: f64,
    pub max_iter: usize,
    pub restarts: usize,
    /// Number of highest sampled local maxima refined by golden-section search.
    pub refine: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { samples: 256, margin: 1e-8, max_semi_axis: 20.0, max_iter: 3000, restarts: 8, refine: 4 }
    }
}

/// `f(w)^T A w + margin |w|^2` at boundary angle `theta`; `+inf` on a singularity.
fn boundary_value<F: PlanarField + ?Sized>(field: &F, a: &Matrix2<f64>, map: &Matrix2<f64>, theta: f64, margin: f64) -> f64 {
    let w = boundary_point(map, theta);
    match field.eval(w) {
        Ok(f) => {
            let aw = [a[(0, 0)] * w[0] + a[(0, 1)] * w[1], a[(1, 0)] * w[0] + a[(1, 1)] * w[1]];
            f[0] * aw[0] + f[1] * aw[1] + margin * (w[0] * w[0] + w[1] * w[1])
        }
        Err(_) => f64::INFINITY,
    }
}

/// Worst boundary value of `A` and its angle, from `samples` uniform angles
/// with the `refine` largest local maxima polished between neighbours.
fn worst_boundary<F: PlanarField + ?Sized>(field: &F, a: &Matrix2<f64>, samples: usize, margin: f64, refine: usize) -> Option<(f64, f64, f64)> {
    let map = boundary_map(a)?;
    let dt = 2.0 * PI / samples as f64;
    let g: Vec<f64> = (0..samples).map(|i| boundary_value(field, a, &map, i as f64 * dt, margin)).collect();
    let excess: f64 = g.iter().map(|v| v.max(0.0)).sum();
    let mut peaks: Vec<usize> = (0..samples)
        .filter(|&i| {
            let prev = g[(i + samples - 1) % samples];
            let next = g[(i + 1) % samples];
            g[i] >= prev && g[i] >= next
        })
        .collect();
    peaks.sort_by(|&x, &y| g[y].total_cmp(&g[x]));
    let (mut worst, mut at) = g.iter().enumerate().map(|(i, &v)| (v, i as f64 * dt)).fold((f64::NEG_INFINITY, 0.0), |m, x| if x.0 > m.0 { x } else { m });
    for &i in peaks.iter().take(refine) {
        if !g[i].is_finite() {
            continue;
        }
        let t0 = i as f64 * dt;
        let (t, v) = golden_max(|t| boundary_value(field, a, &map, t, margin), t0 - dt, t0 + dt, 40);
        if v > worst {
            worst = v;
            at = t;
        }
    }
    Some((worst, at, excess))
}

fn contains_singularity<F: PlanarField + ?Sized>(field: &F, a: &Matrix2<f64>) -> bool {
    field.singular_points().iter().any(|p| quad(a, *p) <= 1.0)
}

fn quad(a: &Matrix2<f64>, w: [f64; 2]) -> f64 {
    a[(0, 0)] * w[0] * w[0] + 2.0 * a[(0, 1)] * w[0] * w[1] + a[(1, 1)] * w[1] * w[1]
}

fn certified<F: PlanarField + ?Sized>(field: &F, a: &Matrix2<f64>, opts: &OptimizeOptions) -> bool {
    matches!(worst_boundary(field, a, opts.samples, opts.margin, opts.refine), Some((w, _, _)) if w <= 0.0) && !contains_singularity(field, a)
}

/// Result of [`optimize_ellipsoid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedShape {
    pub shape: [[f64; 2]; 2],
    pub det: f64,
    /// Determinant of the scaled seed the search started from.
    pub seed_det: f64,
    /// Best determinant after each optimizer iteration.
    pub det_history: Vec<f64>,
    /// Worst `f^T A w + margin |w|^2` on the dense certification grid (negative).
    pub certified_worst: f64,
    pub certification_samples: usize,
}

impl OptimizedShape {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.shape[0][0], self.shape[0][1], self.shape[1][0], self.shape[1][1])
    }
}

/// Scales `seed` to the largest multiple `seed / s` that satisfies the
/// boundary condition, capped by `max_semi_axis`.
pub fn scale_seed<F: PlanarField + ?Sized>(field: &F, seed: &Matrix2<f64>, opts: &OptimizeOptions) -> Result<Matrix2<f64>, RoaError> {
    let (lo_eig, _) = sym_eigen(seed);
    if !(lo_eig > 0.0) {
        return Err(RoaError::SeedInfeasible);
    }
    let s_cap = opts.max_semi_axis.powi(2) * lo_eig;
    let ok = |s: f64| certified(field, &(seed / s), opts);
    let mut s = 1f64.min(s_cap);
    let mut shrinks = 0;
    while !ok(s) {
        s *= 0.5;
        shrinks += 1;
        if shrinks > 80 {
            return Err(RoaError::SeedInfeasible);
        }
    }
    let (mut lo, mut hi) = (s, s);
    while hi < s_cap {
        let next = (2.0 * hi).min(s_cap);
        if ok(next) {
            lo = next;
            hi = next;
        } else {
            hi = next;
            break;
        }
    }
    if hi > lo {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(seed / lo)
}

/// Minimizes `det A` (maximizes the enclosed area) over certified ellipses,
/// starting from the scaled seed.
pub fn optimize_ellipsoid<F: PlanarField + Sync + ?Sized>(field: &F, seed: &Matrix2<f64>, opts: &OptimizeOptions) -> Result<OptimizedShape, RoaError> {
    let start = scale_seed(field, seed, opts)?;
    let seed_det = start.determinant();
    let min_eig = opts.max_semi_axis.powi(-2);
    let objective = |x: &[f64]| -> f64 {
        let a = from_params(x);
        let (lo, _) = sym_eigen(&a);
        if !(lo > 0.0) {
            return 1e10 - lo.min(0.0);
        }
        let mut penalty = 0.0;
        if lo < min_eig {
            penalty += 1.0 + (min_eig - lo) / min_eig;
        }
        if contains_singularity(field, &a) {
            penalty += 1.0;
        }
        match worst_boundary(field, &a, opts.samples, opts.margin, opts.refine) {
            Some((worst, _, excess)) if worst > 0.0 => penalty += 1.0 + excess.min(1e6) + worst.min(1e6),
            None => penalty += 1e6,
            _ => {}
        }
        if penalty > 0.0 {
            1e4 * (1.0 + penalty)
        } else {
            a.determinant().ln()
        }
    };

    let mut x = vec![start[(0, 0)], start[(0, 1)], start[(1, 1)]];
    let mut fx = objective(&x);
    let mut history = vec![fx];
    for _ in 0..opts.restarts.max(1) {
        let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let step: Vec<f64> = x.iter().map(|v| 0.05 * v.abs().max(0.1 * scale)).collect();
        let res = nelder_mead(objective, &x, &step, opts.max_iter, 1e-13, 1e-12);
        history.extend(res.history.iter().map(|&v| v.min(fx)));
        let improved = fx - res.fx;
        if res.fx < fx {
            x = res.x;
            fx = res.fx;
        }
        if improved < 1e-10 {
            break;
        }
    }
    let a = from_params(&x);

    let dense = 4 * opts.samples;
    let map = boundary_map(&a).ok_or(RoaError::Certification { worst: f64::INFINITY, theta: 0.0 })?;
    let (worst, theta) = (0..dense)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / dense as f64;
            (boundary_value(field, &a, &map, t, opts.margin), t)
        })
        .fold((f64::NEG_INFINITY, 0.0), |m, x| if x.0 > m.0 { x } else { m });
    if worst > 0.0 || contains_singularity(field, &a) {
        return Err(RoaError::Certification { worst, theta });
    }
    let mut best = f64::INFINITY;
    let det_history = history
        .into_iter()
        .map(|v| {
            best = best.min(v);
            best.exp()
        })
        .collect();
    Ok(OptimizedShape {
        shape: [[a[(0, 0)], a[(0, 1)]], [a[(1, 0)], a[(1, 1)]]],
        det: a.determinant(),
        seed_det,
        det_history,
        certified_worst: worst,
        certification_samples: dense,
    })
}

/// A certified ellipse `{p : (p - c)^T A (p - c) <= 1}` in rotating coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidRegion {
    pub center: RotatingCartesian,
    #[serde(rename = "A")]
    pub shape: [[f64; 2]; 2],
    /// The `kappa` the region was computed for (spiral law only).
    pub kappa: Option<f64>,
    pub det: f64,
    pub seed_det: f64,
    pub certified_worst: f64,
    pub certification_samples: usize,
}

impl EllipsoidRegion {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.shape[0][0], self.shape[0][1], self.shape[1][0], self.shape[1][1])
    }

    /// `V` at an absolute rotating-frame point.
    pub fn value(&self, p: RotatingCartesian) -> f64 {
        quad(&self.matrix(), [p.u - self.center.u, p.v - self.center.v])
    }

    pub fn contains(&self, p: RotatingCartesian) -> bool {
        self.value(p) <= 1.0 + CONTAINS_TOL
    }

    /// Semi-axis lengths, longest first.
    pub fn semi_axes(&self) -> [f64; 2] {
        let (lo, hi) = sym_eigen(&self.matrix());
        [lo.sqrt().recip(), hi.sqrt().recip()]
    }

    /// `m` ordered boundary vertices in absolute rotating coordinates (not closed).
    pub fn boundary_polyline(&self, m: usize) -> Vec<[f64; 2]> {
        let map = boundary_map(&self.matrix()).expect("certified shape is positive definite");
        (0..m)
            .map(|i| {
                let w = boundary_point(&map, 2.0 * PI * i as f64 / m as f64);
                [w[0] + self.center.u, w[1] + self.center.v]
            })
            .collect()
    }

    /// Largest `V` on the arc `{r = rho, psi in [psi_lo, psi_hi]}` about the
    /// target point; returns `(psi, V)`.
    pub fn max_on_circle(&self, rho: f64, psi_range: (f64, f64)) -> (f64, f64) {
        let v = |psi: f64| self.value(RotatingPolar { r: rho, psi }.to_cartesian());
        let (lo, hi) = psi_range;
        let n = 720;
        let grid = linspace(lo, hi, n + 1);
        let vals: Vec<f64> = grid.iter().map(|&p| v(p)).collect();
        let (mut best_psi, mut best) = (grid[0], vals[0]);
        let mut peaks: Vec<usize> = (0..=n)
            .filter(|&i| (i == 0 || vals[i] >= vals[i - 1]) && (i == n || vals[i] >= vals[i + 1]))
            .collect();
        peaks.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        for &i in peaks.iter().take(3) {
            if vals[i] > best {
                best = vals[i];
                best_psi = grid[i];
            }
            let a = grid[i.saturating_sub(1)];
            let b = grid[(i + 1).min(n)];
            let (p, pv) = golden_max(v, a, b, 50);
            if pv > best {
                best = pv;
                best_psi = p;
            }
        }
        (best_psi, best)
    }

    pub fn contains_circle(&self, rho: f64, psi_range: (f64, f64)) -> bool {
        self.max_on_circle(rho, psi_range).1 <= 1.0 + CONTAINS_TOL
    }

    /// The same ellipse with the rotating frame turned by `theta`.
    pub fn rotated(&self, theta: f64) -> EllipsoidRegion {
        let (s, c) = theta.sin_cos();
        let rot = Matrix2::new(c, -s, s, c);
        let a = rot * self.matrix() * rot.transpose();
        let center = RotatingCartesian::new(c * self.center.u - s * self.center.v, s * self.center.u + c * self.center.v);
        EllipsoidRegion { center, shape: [[a[(0, 0)], a[(0, 1)]], [a[(1, 0)], a[(1, 1)]]], ..self.clone() }
    }
}

/// Full pipeline for one parameter set: equilibrium, linearization,
/// Lyapunov seed, optimized and certified ellipse.
pub fn stable_region(params: &PursuitParams, opts: &OptimizeOptions) -> Result<(Equilibrium, EllipsoidRegion, OptimizedShape), RoaError> {
    let eq = stable_equilibrium(params)?;
    let field = ShiftedField::new(*params, &eq);
    let seed = lyapunov_seed(&field.jacobian()?)?;
    let shape = optimize_ellipsoid(&field, &seed, opts)?;
    let region = EllipsoidRegion {
        center: field.center,
        shape: shape.shape,
        kappa: (params.mode == Mode::Spiral).then_some(params.kappa),
        det: shape.det,
        seed_det: shape.seed_det,
        certified_worst: shape.certified_worst,
        certification_samples: shape.certification_samples,
    };
    Ok((eq, region, shape))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaEntry {
    pub kappa: f64,
    pub equilibrium: Option<Equilibrium>,
    pub region: Option<EllipsoidRegion>,
    /// Largest `V` over the circle of initial conditions `{r = kappa}`.
    pub circle_max_value: Option<f64>,
    /// Whether the circle lies inside the certified region.
    pub member: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableRegionSweep {
    /// Upper admissible `kappa`.
    pub c: f64,
    pub psi_range: (f64, f64),
    pub entries: Vec<KappaEntry>,
    /// The `kappa` values whose circle is certified.
    pub member_kappas: Vec<f64>,
}

/// `n` points in `[0.01, 0.999 c]`.
pub fn default_kappa_grid(params: &PursuitParams, n: usize) -> Result<Vec<f64>, RoaError> {
    let c = spiral_kappa_bound(params.k1, params.pursuer_radius).ok_or(RoaError::WrongMode("admissible spiral"))?;
    Ok(linspace(0.01, 0.999 * c, n))
}

/// Certified regions along a `kappa` grid and the set of `kappa` whose
/// initial circle they contain. `params.kappa` is ignored.
pub fn stable_region_spiral(params: &PursuitParams, kappa_grid: &[f64], psi_range: (f64, f64), opts: &OptimizeOptions) -> Result<StableRegionSweep, RoaError> {
    if params.mode != Mode::Spiral {
        return Err(RoaError::WrongMode("spiral"));
    }
    let c = spiral_kappa_bound(params.k1, params.pursuer_radius).ok_or(RoaError::WrongMode("admissible spiral"))?;
    let entries: Vec<KappaEntry> = kappa_grid
        .par_iter()
        .map(|&kappa| {
            let mut entry = KappaEntry { kappa, equilibrium: None, region: None, circle_max_value: None, member: false, error: None };
            if !(kappa > 0.0 && kappa < c) {
                entry.error = Some(format!("kappa = {kappa} outside (0, {c})"));
                return entry;
            }
            match stable_region(&params.with_kappa(kappa), opts) {
                Ok((eq, region, _)) => {
                    let (_, vmax) = region.max_on_circle(kappa, psi_range);
                    entry.equilibrium = Some(eq);
                    entry.circle_max_value = Some(vmax);
                    entry.member = vmax <= 1.0;
                    entry.region = Some(region);
                }
                Err(e) => entry.error = Some(e.to_string()),
            }
            entry
        })
        .collect();
    let member_kappas = entries.iter().filter(|e| e.member).map(|e| e.kappa).collect();
    Ok(StableRegionSweep { c, psi_range, entries, member_kappas })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    Diverged,
    Singular,
    Undecided,
}

/// Settings for classifying a single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeOptions {
    /// RK4 step.
    pub step: f64,
    pub t_end: f64,
    pub tol: f64,
    pub window: f64,
    /// Escape radius as a multiple of `R`.
    pub escape_factor: f64,
}

impl OutcomeOptions {
    pub fn for_params(params: &PursuitParams) -> Self {
        let period = params.period();
        Self { step: 5e-3 * period, t_end: 60.0 * period, tol: 1e-3, window: period, escape_factor: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub outcome: Outcome,
    pub t_converged: Option<f64>,
}

/// Integrates the rotating Cartesian system from `s0` and classifies the run.
///
/// `targets` lists candidate limit points; the run counts as converged when
/// every evader stays within `tol` of one of them for `window`.
pub fn run_outcome(params: &PursuitParams, s0: &[f64], targets: &[RotatingPolar], opts: &OutcomeOptions) -> RunOutcome {
    let frame = Frame::RotatingCartesian;
    let mut monitors: Vec<ConvergenceMonitor> = targets.iter().map(|t| ConvergenceMonitor::new(frame, vec![*t], opts.tol, opts.window)).collect();
    let escape = opts.escape_factor * params.pursuer_radius;
    let mut diverged = false;
    let mut hit: Option<usize> = None;
    let mut check = |t: f64, s: &[f64]| -> bool {
        if s.chunks_exact(2).any(|p| p[0].hypot(p[1]) > escape) {
            diverged = true;
            return true;
        }
        for (i, m) in monitors.iter_mut().enumerate() {
            if m.update(t, s) {
                hit = Some(i);
                return true;
            }
        }
        false
    };
    if check(0.0, s0) {
        let outcome = if diverged { Outcome::Diverged } else { Outcome::Converged };
        return RunOutcome { outcome, t_converged: (!diverged).then_some(0.0) };
    }
    let settings = IntegratorSettings::rk4(opts.step, opts.t_end, opts.t_end);
    let traj = integrate_until(|_, s, out| rhs_rotating_cartesian(params, s, out), frame, 0.0, s0, &settings, &mut check);
    let outcome = match traj.map(|t| t.termination) {
        Ok(Termination::Singular { .. } | Termination::DomainError { .. }) => Outcome::Singular,
        _ if diverged => Outcome::Diverged,
        Ok(Termination::Converged) => Outcome::Converged,
        _ => Outcome::Undecided,
    };
    let t_converged = match (outcome, hit) {
        (Outcome::Converged, Some(i)) => monitors[i].inside_since(),
        _ => None,
    };
    RunOutcome { outcome, t_converged }
}

/// Uniform grid over initial `(r, psi)`; nodes include both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarGrid {
    pub r_min: f64,
    pub r_max: f64,
    pub nr: usize,
    pub psi_min: f64,
    pub psi_max: f64,
    pub npsi: usize,
}

impl PolarGrid {
    pub fn validate(&self) -> Result<(), RoaError> {
        if !(self.r_min > 0.0 && self.r_max >= self.r_min) {
            return Err(RoaError::InvalidGrid("radii must satisfy 0 < r_min <= r_max".into()));
        }
        if self.nr == 0 || self.npsi == 0 {
            return Err(RoaError::InvalidGrid("grid must have at least one node per axis".into()));
        }
        Ok(())
    }

    pub fn radii(&self) -> Vec<f64> {
        linspace(self.r_min, self.r_max, self.nr)
    }

    pub fn angles(&self) -> Vec<f64> {
        linspace(self.psi_min, self.psi_max, self.npsi)
    }
}

/// Evader 0's initial polar position for anchored (two-evader) maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub kappa: f64,
    pub psi0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub grid: PolarGrid,
    pub anchor: Option<Anchor>,
    pub params: PursuitParams,
    pub options: OutcomeOptions,
    /// Row-major: index `ir * npsi + ipsi`.
    pub outcomes: Vec<Outcome>,
    pub t_converged: Vec<Option<f64>>,
}

impl RegionMap {
    pub fn outcome(&self, ir: usize, ipsi: usize) -> Outcome {
        self.outcomes[ir * self.grid.npsi + ipsi]
    }

    pub fn count(&self, o: Outcome) -> usize {
        self.outcomes.iter().filter(|&&x| x == o).count()
    }
}

fn candidate_targets(params: &PursuitParams) -> Vec<RotatingPolar> {
    match params.mode {
        Mode::Circular => stable_equilibrium(params).map(|e| vec![e.polar()]).unwrap_or_default(),
        Mode::Spiral => {
            if check_admissibility(params).spiral_ok {
                stable_equilibrium(params).map(|e| vec![e.polar()]).unwrap_or_default()
            } else {
                solve_spiral(params).map(|s| s.equilibria.iter().map(|e| e.polar()).collect()).unwrap_or_default()
            }
        }
    }
}

/// Classifies every grid node by integrating from it.
///
/// Without an anchor the node is the only evader and, under the spiral law,
/// sets `kappa` itself. With an anchor, evader 0 starts at
/// `(anchor.kappa, anchor.psi0)` and the node is evader 1; convergence means
/// both evaders reach the shared equilibrium.
pub fn brute_force_region(params: &PursuitParams, grid: &PolarGrid, anchor: Option<Anchor>, opts: &OutcomeOptions) -> Result<RegionMap, RoaError> {
    grid.validate()?;
    let radii = grid.radii();
    let angles = grid.angles();
    let anchored_params = anchor.map(|a| params.with_kappa(a.kappa));
    let anchored_targets = anchored_params.map(|p| candidate_targets(&p)).unwrap_or_default();
    let row_targets: Vec<Vec<RotatingPolar>> = match anchor {
        Some(_) => Vec::new(),
        None => radii.par_iter().map(|&r| candidate_targets(&params.with_kappa(r))).collect(),
    };
    let results: Vec<RunOutcome> = (0..radii.len() * angles.len())
        .into_par_iter()
        .map(|idx| {
            let (ir, ip) = (idx / angles.len(), idx % angles.len());
            let node = RotatingPolar { r: radii[ir], psi: angles[ip] }.to_cartesian();
            match (anchor, anchored_params) {
                (Some(a), Some(p)) => {
                    let e0 = RotatingPolar { r: a.kappa, psi: a.psi0 }.to_cartesian();
                    run_outcome(&p, &[e0.u, e0.v, node.u, node.v], &anchored_targets, opts)
                }
                _ => run_outcome(&params.with_kappa(radii[ir]), &[node.u, node.v], &row_targets[ir], opts),
            }
        })
        .collect();
    Ok(RegionMap {
        grid: *grid,
        anchor,
        params: *params,
        options: *opts,
        outcomes: results.iter().map(|r| r.outcome).collect(),
        t_converged: results.iter().map(|r| r.t_converged).collect(),
    })
}

/// Largest radius on `radius_grid` whose target-centred circle lies inside
/// `region` and every rotation of it by the sampled angles.
pub fn max_inscribed_origin_circle(region: &EllipsoidRegion, radius_grid: &[f64], theta_samples: usize) -> Result<f64, RoaError> {
    let full = (-PI, PI);
    let rotations: Vec<EllipsoidRegion> = (0..theta_samples.max(1)).map(|i| region.rotated(2.0 * PI * i as f64 / theta_samples.max(1) as f64)).collect();
    let origin = RotatingCartesian::new(0.0, 0.0);
    if rotations.iter().any(|e| !e.contains(origin)) {
        return Err(RoaError::EmptyIntersection);
    }
    let inside = |rho: f64| rho == 0.0 || rotations.iter().all(|e| e.contains_circle(rho, full));
    let mut best = None;
    for &rho in radius_grid {
        if inside(rho) {
            best = Some(best.map_or(rho, |b: f64| b.max(rho)));
        }
    }
    best.ok_or(RoaError::EmptyIntersection)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiRoaResult {
    pub r_max: f64,
    pub theta_samples: usize,
    pub radius_samples: usize,
    pub region: EllipsoidRegion,
    pub equilibrium: Equilibrium,
}

/// Pursuer-position-independent disk around the target point for the circular law.
pub fn pi_roa(params: &PursuitParams, theta_samples: usize, radius_samples: usize, opts: &OptimizeOptions) -> Result<PiRoaResult, RoaError> {
    if params.mode != Mode::Circular {
        return Err(RoaError::WrongMode("circular"));
    }
    let (eq, region, _) = stable_region(params, opts)?;
    let c = region.center;
    let hi = c.u.hypot(c.v) + region.semi_axes()[0];
    let grid = linspace(0.0, hi, radius_samples.max(2));
    let r_max = max_inscribed_origin_circle(&region, &grid, theta_samples)?;
    Ok(PiRoaResult { r_max, theta_samples, radius_samples: grid.len(), region, equilibrium: eq })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiRoaCheck {
    pub radius: f64,
    pub angles: usize,
    pub phases: usize,
    pub converged: usize,
    /// `(evader angle, pursuer phase, outcome)` for every run that did not converge.
    pub failures: Vec<(f64, f64, Outcome)>,
}

impl PiRoaCheck {
    pub fn all_converged(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Integrates from `angles` points on the circle of `radius`, each against
/// `phases` initial pursuer phases, and checks convergence to the stable point.
pub fn verify_pi_roa(params: &PursuitParams, radius: f64, angles: usize, phases: usize, opts: &OutcomeOptions) -> Result<PiRoaCheck, RoaError> {
    let eq = stable_equilibrium(params)?;
    let target = [eq.polar()];
    let jobs: Vec<(f64, f64)> = (0..angles)
        .flat_map(|i| (0..phases).map(move |j| (2.0 * PI * i as f64 / angles as f64, 2.0 * PI * j as f64 / phases as f64)))
        .collect();
    let results: Vec<Outcome> = jobs
        .par_iter()
        .map(|&(alpha, theta)| {
            // With the pursuer starting at phase theta, the rotating frame is turned by theta.
            let p = RotatingPolar { r: radius, psi: alpha - theta }.to_cartesian();
            run_outcome(params, &[p.u, p.v], &target, opts).outcome
        })
        .collect();
    let failures: Vec<(f64, f64, Outcome)> = jobs.iter().zip(&results).filter(|(_, &o)| o != Outcome::Converged).map(|(&(a, t), &o)| (a, t, o)).collect();
    Ok(PiRoaCheck { radius, angles, phases, converged: results.len() - failures.len(), failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circ() -> PursuitParams {
        PursuitParams::circular(1.0, 2.0, 1.0, 1.0).unwrap()
    }

    fn region(center: (f64, f64), a: [[f64; 2]; 2]) -> EllipsoidRegion {
        EllipsoidRegion {
            center: RotatingCartesian::new(center.0, center.1),
            shape: a,
            kappa: None,
            det: a[0][0] * a[1][1] - a[0][1] * a[1][0],
            seed_det: 1.0,
            certified_worst: -1.0,
            certification_samples: 0,
        }
    }

    #[test]
    fn lyapunov_examples() {
        let a = lyapunov_solve(&Matrix2::new(-1.0, 0.0, 0.0, -2.0)).unwrap();
        assert!((a - Matrix2::new(0.5, 0.0, 0.0, 0.25)).norm() < 1e-14);
        let s = lyapunov_seed(&Matrix2::new(-1.0, 0.0, 0.0, -2.0)).unwrap();
        assert!((s - Matrix2::new(1.0, 0.0, 0.0, 0.5)).norm() < 1e-14);
        let j = Matrix2::new(0.0, 1.0, -1.0, -1.0);
        let a = lyapunov_solve(&j).unwrap();
        assert!((a - Matrix2::new(1.5, 0.5, 0.5, 1.0)).norm() < 1e-14);
        assert!((a * j + j.transpose() * a + Matrix2::identity()).norm() < 1e-12);
        assert!(matches!(lyapunov_seed(&Matrix2::new(1.0, 0.0, 0.0, -1.0)), Err(RoaError::NotHurwitz { .. })));
    }

    #[test]
    fn shifted_field_basics() {
        let p = PursuitParams::spiral(1.0, 1.0, 2.0, 2.0, 1.0).unwrap();
        let eq = stable_equilibrium(&p).unwrap();
        let f0 = shifted_rhs([0.0, 0.0], &p, &eq).unwrap();
        assert!(f0[0].abs() < 1e-9 && f0[1].abs() < 1e-9);
        let c = eq.cartesian();
        let w = [0.1, -0.2];
        let mut direct = [0.0; 2];
        rhs_rotating_cartesian(&p, &[w[0] + c.u, w[1] + c.v], &mut direct).unwrap();
        assert_eq!(shifted_rhs(w, &p, &eq).unwrap(), direct);
    }

    #[test]
    fn singular_points_of_circular_field() {
        let p = circ();
        let eq = stable_equilibrium(&p).unwrap();
        let f = ShiftedField::new(p, &eq);
        let pts = f.singular_points();
        assert_eq!(pts.len(), 1);
        assert!((pts[0][0] + f.center.u - 2.0).abs() < 1e-12);
        // The spiral pursuer never meets an evader in the rotating frame for these parameters.
        let sp = PursuitParams::spiral(1.0, 1.0, 2.0, 2.0, 1.0).unwrap();
        let eq = stable_equilibrium(&sp).unwrap();
        assert!(ShiftedField::new(sp, &eq).singular_points().is_empty());
    }

    #[test]
    fn linear_field_hits_scale_cap() {
        let field = |w: [f64; 2]| [-w[0], -w[1]];
        let opts = OptimizeOptions { max_semi_axis: 3.0, ..Default::default() };
        let res = optimize_ellipsoid(&field, &Matrix2::new(1.0, 0.2, 0.2, 0.5), &opts).unwrap();
        assert!(res.det <= res.seed_det);
        assert!(res.det_history.windows(2).all(|w| w[1] <= w[0]));
        let (lo, _) = sym_eigen(&res.matrix());
        assert!(lo >= 1.0 / 9.0 && (lo - 1.0 / 9.0).abs() < 1e-6, "{lo}");
    }

    #[test]
    fn circular_region_contains_small_disk() {
        let (eq, region, shape) = stable_region(&circ(), &OptimizeOptions::default()).unwrap();
        assert!(shape.det <= shape.seed_det);
        assert!(region.certified_worst < 0.0);
        let c = eq.cartesian();
        for i in 0..64 {
            let t = 2.0 * PI * i as f64 / 64.0;
            assert!(region.contains(RotatingCartesian::new(c.u + 0.05 * t.cos(), c.v + 0.05 * t.sin())));
        }
    }

    #[test]
    fn inscribed_circle_geometry() {
        let grid = linspace(0.0, 2.0, 201);
        let r = max_inscribed_origin_circle(&region((0.5, 0.0), [[1.0, 0.0], [0.0, 1.0]]), &grid, 16).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        let r = max_inscribed_origin_circle(&region((0.0, 0.0), [[1.0, 0.0], [0.0, 1.0]]), &grid, 16).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let e = max_inscribed_origin_circle(&region((2.0, 0.0), [[1.0, 0.0], [0.0, 1.0]]), &grid, 16);
        assert_eq!(e, Err(RoaError::EmptyIntersection));
    }

    #[test]
    fn circle_value_and_polyline() {
        let reg = region((0.0, 0.0), [[4.0, 0.0], [0.0, 1.0]]);
        let (_, v) = reg.max_on_circle(0.5, (-PI, PI));
        assert!((v - 1.0).abs() < 1e-12);
        for p in reg.boundary_polyline(32) {
            assert!((reg.value(RotatingCartesian::new(p[0], p[1])) - 1.0).abs() < 1e-12);
        }
        assert_eq!(reg.semi_axes(), [1.0, 0.5]);
    }

    #[test]
    fn cell_at_equilibrium_converges_immediately() {
        let p = circ();
        let eq = stable_equilibrium(&p).unwrap();
        let grid = PolarGrid { r_min: eq.r_star, r_max: eq.r_star, nr: 1, psi_min: eq.psi_star, psi_max: eq.psi_star, npsi: 1 };
        let map = brute_force_region(&p, &grid, None, &OutcomeOptions::for_params(&p)).unwrap();
        assert_eq!(map.outcomes, vec![Outcome::Converged]);
        assert_eq!(map.t_converged, vec![Some(0.0)]);
    }

    #[test]
    fn anchored_spiral_cell() {
        let p = PursuitParams::spiral(1.0, 1.0, 2.0, 2.0, 1.0).unwrap();
        let grid = PolarGrid { r_min: 0.5, r_max: 0.5, nr: 1, psi_min: PI / 2.0, psi_max: PI / 2.0, npsi: 1 };
        let anchor = Anchor { kappa: 1.0, psi0: 0.0 };
        let map = brute_force_region(&p, &grid, Some(anchor), &OutcomeOptions::for_params(&p)).unwrap();
        assert_eq!(map.outcomes, vec![Outcome::Converged]);
    }

    #[test]
    fn far_cell_is_classified() {
        let p = circ();
        let grid = PolarGrid { r_min: 20.0, r_max: 20.0, nr: 1, psi_min: 0.0, psi_max: 0.0, npsi: 1 };
        let opts = OutcomeOptions { t_end: 20.0, ..OutcomeOptions::for_params(&p) };
        let map = brute_force_region(&p, &grid, None, &opts).unwrap();
        assert_eq!(map.outcomes.len(), 1);
        assert!(PolarGrid { r_min: 0.0, ..grid }.validate().is_err());
    }
}
