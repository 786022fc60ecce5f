//! Equilibria of the rotating-frame dynamics.
//!
//! Eliminating the angle from the two equilibrium conditions leaves one
//! scalar equation in the radius,
//!
//! ```text
//! r^3 - R^2 exp(2 k1 (r - kappa)) r + k / omega = 0,
//! ```
//!
//! which is transcendental for the spiral law and a depressed cubic for the
//! circular law (`k1 = 0`). The angle is then `psi = acos(r / R*)` on the
//! positive branch, where `R* = R exp(k1 (r - kappa))` is the limiting
//! pursuer radius.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::pursuer_radius;
use crate::model::{check_admissibility, Mode, PursuitParams, RotatingCartesian, RotatingPolar};
use crate::numeric::brent;

const ROOT_XTOL: f64 = 1e-12;
const SCAN_POINTS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("no positive root of the equilibrium equation in ({lo:e}, {hi:e})")]
    NoRoot { lo: f64, hi: f64 },
    #[error("no equilibrium exists: k/(omega R^3) = {ratio} is outside (0, 2/(3 sqrt 3))")]
    Existence { ratio: f64 },
    #[error("target radius {target} is out of range: {reason}")]
    Range { target: f64, reason: String },
    #[error("parameters violate the spiral admissibility condition")]
    NotAdmissible,
    #[error("operation requires {0} mode")]
    WrongMode(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The single root guaranteed by the spiral admissibility condition.
    SpiralUnique,
    /// One of possibly several roots when the spiral condition fails.
    SpiralCandidate,
    /// Circular law, inner root `r_s2` (stable).
    CircularInner,
    /// Circular law, outer root `r_s1` (saddle).
    CircularOuter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub r_star: f64,
    pub psi_star: f64,
    /// Limiting pursuer radius.
    #[serde(rename = "R_star")]
    pub pursuer_radius_star: f64,
    pub branch: Branch,
    /// Residual of the radius equation.
    pub cubic_residual: f64,
    /// Residual of `cos(psi) sin^2(psi) = k / (omega R*^3)`.
    pub angle_residual: f64,
}

impl Equilibrium {
    fn from_root(params: &PursuitParams, r: f64, branch: Branch) -> Self {
        let rs = pursuer_radius(r, params);
        let psi = (r / rs).clamp(-1.0, 1.0).acos();
        let (cubic_residual, angle_residual) = substitution_residuals(params, r, psi);
        Self { r_star: r, psi_star: psi, pursuer_radius_star: rs, branch, cubic_residual, angle_residual }
    }

    pub fn polar(&self) -> RotatingPolar {
        RotatingPolar { r: self.r_star, psi: self.psi_star }
    }

    pub fn cartesian(&self) -> RotatingCartesian {
        self.polar().to_cartesian()
    }
}

/// Left-hand side of the radius equation.
pub fn radius_equation(params: &PursuitParams, r: f64) -> f64 {
    let rs = pursuer_radius(r, params);
    r * r * r - rs * rs * r + params.k / params.omega
}

/// Residuals of the radius equation and the angle condition at `(r, psi)`.
pub fn substitution_residuals(params: &PursuitParams, r: f64, psi: f64) -> (f64, f64) {
    let rs = pursuer_radius(r, params);
    let (s, c) = psi.sin_cos();
    let angle = c * s * s - params.k / (params.omega * rs.powi(3));
    (radius_equation(params, r), angle)
}

/// Residuals of the two raw equilibrium conditions (radial and angular
/// balance) at `(r, psi)`, expressed through the limiting pursuer radius of
/// evader 0 at `r0`.
pub fn balance_residuals(params: &PursuitParams, r0: f64, r: f64, psi: f64) -> (f64, f64) {
    let rs = pursuer_radius(r0, params);
    let (s, c) = psi.sin_cos();
    (r - rs * c, c * s * s - params.k / (params.omega * rs.powi(3)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityWarning {
    pub roots_found: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralEquilibria {
    pub equilibria: Vec<Equilibrium>,
    pub warning: Option<AdmissibilityWarning>,
}

/// All positive equilibria of the spiral law, in increasing radius.
pub fn solve_spiral(params: &PursuitParams) -> Result<SpiralEquilibria, EquilibriumError> {
    if params.mode != Mode::Spiral || params.k1 <= 0.0 {
        return Err(EquilibriumError::WrongMode("spiral"));
    }
    let f = |r: f64| radius_equation(params, r);

    if check_admissibility(params).spiral_ok {
        // f(0) = k/omega > 0 and f -> -inf, so the first sign change brackets the unique root.
        let mut hi = params.pursuer_radius;
        let mut tries = 0;
        while f(hi) >= 0.0 {
            hi *= 2.0;
            tries += 1;
            if tries > 200 {
                return Err(EquilibriumError::NoRoot { lo: 0.0, hi });
            }
        }
        let r = brent(f, 0.0, hi, ROOT_XTOL, 500).ok_or(EquilibriumError::NoRoot { lo: 0.0, hi })?;
        return Ok(SpiralEquilibria { equilibria: vec![Equilibrium::from_root(params, r, Branch::SpiralUnique)], warning: None });
    }

    let hi = scan_upper_bound(params).ok_or(EquilibriumError::NoRoot { lo: 0.0, hi: f64::INFINITY })?;
    let lo = hi * 1e-12;
    let ratio = (hi / lo).powf(1.0 / (SCAN_POINTS - 1) as f64);
    let mut roots = Vec::new();
    let mut a = lo;
    let mut fa = f(a);
    for i in 1..SCAN_POINTS {
        let b = if i == SCAN_POINTS - 1 { hi } else { lo * ratio.powi(i as i32) };
        let fb = f(b);
        if fa == 0.0 {
            roots.push(a);
        } else if fa.signum() != fb.signum() && fb != 0.0 {
            if let Some(r) = brent(f, a, b, ROOT_XTOL, 500) {
                roots.push(r);
            }
        }
        a = b;
        fa = fb;
    }
    if roots.is_empty() {
        return Err(EquilibriumError::NoRoot { lo, hi });
    }
    let warning = (roots.len() > 1).then_some(AdmissibilityWarning { roots_found: roots.len() });
    Ok(SpiralEquilibria {
        equilibria: roots.into_iter().map(|r| Equilibrium::from_root(params, r, Branch::SpiralCandidate)).collect(),
        warning,
    })
}

/// A radius beyond which the spiral radius equation stays negative: past
/// `1/k1` the ratio `R exp(k1 (r - kappa)) / r` increases, so once it exceeds
/// one and `f < 0`, no further root exists.
fn scan_upper_bound(params: &PursuitParams) -> Option<f64> {
    let mut b = params.pursuer_radius.max(1.0 / params.k1);
    for _ in 0..200 {
        if pursuer_radius(b, params) > b && radius_equation(params, b) < 0.0 {
            return Some(b);
        }
        b *= 2.0;
    }
    None
}

/// The three real roots of the circular-law cubic `r^3 - R^2 r + k/omega = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularRoots {
    pub r_s1: f64,
    pub r_s2: f64,
    pub r_s3: f64,
    /// Cardano cube roots, stored as `[re, im]`.
    pub sigma1: [f64; 2],
    pub sigma2: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularEquilibria {
    pub roots: CircularRoots,
    /// `(r_s1, psi_s1)`, the saddle.
    pub outer: Equilibrium,
    /// `(r_s2, psi_s2)`, the stable point.
    pub inner: Equilibrium,
}

/// Cardano's cube roots for the circular cubic, principal branch.
pub fn cardano_sigmas(k: f64, pursuer_radius: f64, omega: f64) -> (Complex64, Complex64) {
    let half_q = k / (2.0 * omega);
    let disc = Complex64::new(half_q * half_q - pursuer_radius.powi(6) / 27.0, 0.0);
    let sq = disc.sqrt();
    let sigma1 = (-sq - half_q).cbrt();
    let sigma2 = (sq - half_q).cbrt();
    (sigma1, sigma2)
}

/// The three roots in Cardano form, returned as `(r_s1, r_s2, r_s3)`.
pub fn cardano_roots(k: f64, pursuer_radius: f64, omega: f64) -> (Complex64, Complex64, Complex64) {
    let (s1, s2) = cardano_sigmas(k, pursuer_radius, omega);
    let j = Complex64::i();
    let h = 3f64.sqrt() / 2.0;
    let r1 = s2 + s1;
    let r2 = -s2 / 2.0 + j * h * s1 - s1 / 2.0 - j * h * s2;
    let r3 = -s2 / 2.0 - j * h * s1 - s1 / 2.0 + j * h * s2;
    (r1, r2, r3)
}

/// Trigonometric solution of `r^3 - R^2 r + q = 0` with three real roots,
/// sorted descending.
fn trig_roots(pursuer_radius: f64, q: f64) -> [f64; 3] {
    let r = pursuer_radius;
    let m = 2.0 * r / 3f64.sqrt();
    let arg = (-3.0 * 3f64.sqrt() * q / (2.0 * r * r * r)).clamp(-1.0, 1.0);
    let theta = arg.acos() / 3.0;
    let mut roots = [0, 1, 2].map(|j| m * (theta - 2.0 * PI * j as f64 / 3.0).cos());
    roots.sort_by(|a, b| b.total_cmp(a));
    roots
}

pub fn solve_circular(params: &PursuitParams) -> Result<CircularEquilibria, EquilibriumError> {
    if params.mode != Mode::Circular || params.k1 != 0.0 {
        return Err(EquilibriumError::WrongMode("circular"));
    }
    let adm = check_admissibility(params);
    if !adm.circular_ok {
        return Err(EquilibriumError::Existence { ratio: adm.ratio });
    }
    let [r_s1, r_s2, r_s3] = trig_roots(params.pursuer_radius, params.k / params.omega);
    let (s1, s2) = cardano_sigmas(params.k, params.pursuer_radius, params.omega);
    let roots = CircularRoots { r_s1, r_s2, r_s3, sigma1: [s1.re, s1.im], sigma2: [s2.re, s2.im] };
    Ok(CircularEquilibria {
        roots,
        outer: Equilibrium::from_root(params, r_s1, Branch::CircularOuter),
        inner: Equilibrium::from_root(params, r_s2, Branch::CircularInner),
    })
}

/// Angular velocity that places the stable equilibrium at `target_r`.
pub fn omega_for_radius(params: &PursuitParams, target_r: f64) -> Result<f64, EquilibriumError> {
    let range = |reason: &str| EquilibriumError::Range { target: target_r, reason: reason.to_string() };
    let r2 = params.pursuer_radius * params.pursuer_radius;
    let denom = match params.mode {
        Mode::Circular => {
            if !(target_r > 0.0 && target_r < params.pursuer_radius / 3f64.sqrt()) {
                return Err(range("circular targets must lie in (0, R/sqrt 3)"));
            }
            r2 * target_r - target_r.powi(3)
        }
        Mode::Spiral => {
            if !check_admissibility(params).spiral_ok {
                return Err(EquilibriumError::NotAdmissible);
            }
            if !(target_r > 0.0) {
                return Err(range("must be > 0"));
            }
            let rs = pursuer_radius(target_r, params);
            rs * rs * target_r - target_r.powi(3)
        }
    };
    if !(denom > 0.0) {
        return Err(range("no positive angular velocity reaches this radius"));
    }
    Ok(params.k / denom)
}

/// Common equilibrium shared by every evader under the spiral law.
pub fn multi_evader_equilibrium(params: &PursuitParams) -> Result<Equilibrium, EquilibriumError> {
    if params.mode != Mode::Spiral {
        return Err(EquilibriumError::WrongMode("spiral"));
    }
    if !check_admissibility(params).spiral_ok {
        return Err(EquilibriumError::NotAdmissible);
    }
    let sol = solve_spiral(params)?;
    Ok(sol.equilibria[0])
}

/// The equilibrium every evader is herded to: the unique spiral point or the
/// inner circular point.
pub fn stable_equilibrium(params: &PursuitParams) -> Result<Equilibrium, EquilibriumError> {
    match params.mode {
        Mode::Spiral => multi_evader_equilibrium(params),
        Mode::Circular => Ok(solve_circular(params)?.inner),
    }
}
