//! Domain types for the herding problem: pursuit parameters, the four
//! coordinate frames and the admissibility conditions of the two pursuit laws.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound of `cos(psi) sin^2(psi)`, which limits `k / (omega R^3)` in circular mode.
pub const CIRCULAR_RATIO_BOUND: f64 = 0.384_900_179_459_750_5; // 2 / (3 sqrt 3)

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Pursuer radius modulated by the farthest evader (`k1 > 0`).
    Spiral,
    /// Constant pursuer radius (`k1 = 0`).
    Circular,
}

/// Parameters shared by both pursuit laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PursuitParams {
    /// Repulsion strength.
    pub k: f64,
    /// Radial feedback gain; zero in circular mode.
    pub k1: f64,
    /// Initial pursuer distance from the target.
    pub pursuer_radius: f64,
    /// Angular velocity of the pursuer.
    pub omega: f64,
    /// Initial radius of evader 0, the farthest evader at `t = 0`.
    pub kappa: f64,
    pub mode: Mode,
}

impl PursuitParams {
    pub fn spiral(k: f64, k1: f64, pursuer_radius: f64, omega: f64, kappa: f64) -> Result<Self, ModelError> {
        let p = Self { k, k1, pursuer_radius, omega, kappa, mode: Mode::Spiral };
        p.validate()?;
        Ok(p)
    }

    pub fn circular(k: f64, pursuer_radius: f64, omega: f64, kappa: f64) -> Result<Self, ModelError> {
        let p = Self { k, k1: 0.0, pursuer_radius, omega, kappa, mode: Mode::Circular };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        positive("k", self.k)?;
        positive("R", self.pursuer_radius)?;
        positive("omega", self.omega)?;
        positive("kappa", self.kappa)?;
        if !self.k1.is_finite() || self.k1 < 0.0 {
            return Err(invalid("k1", "must be >= 0"));
        }
        match self.mode {
            Mode::Circular if self.k1 != 0.0 => Err(invalid("k1", "must be 0 in circular mode")),
            Mode::Spiral if self.k1 == 0.0 => Err(invalid("k1", "must be > 0 in spiral mode")),
            _ => Ok(()),
        }
    }

    pub fn with_omega(self, omega: f64) -> Self {
        Self { omega, ..self }
    }

    pub fn with_kappa(self, kappa: f64) -> Self {
        Self { kappa, ..self }
    }

    /// Rotation period `2 pi / omega`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }
}

fn positive(field: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, "must be > 0"))
    }
}

fn invalid(field: &'static str, reason: &str) -> ModelError {
    ModelError::InvalidParam { field, reason: reason.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FixedCartesian {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FixedPolar {
    pub r: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RotatingCartesian {
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RotatingPolar {
    pub r: f64,
    pub psi: f64,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Signed difference `a - b` wrapped into `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

fn polar_of(x: f64, y: f64) -> (f64, f64) {
    if x == 0.0 && y == 0.0 {
        (0.0, 0.0)
    } else {
        (x.hypot(y), normalize_angle(y.atan2(x)))
    }
}

impl FixedCartesian {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn to_polar(self) -> FixedPolar {
        let (r, phi) = polar_of(self.x, self.y);
        FixedPolar { r, phi }
    }

    /// Coordinates in the frame rotating counterclockwise at `omega`.
    pub fn to_rotating(self, t: f64, omega: f64) -> RotatingCartesian {
        let (s, c) = (omega * t).sin_cos();
        RotatingCartesian { u: self.x * c + self.y * s, v: -self.x * s + self.y * c }
    }
}

impl FixedPolar {
    pub fn to_cartesian(self) -> FixedCartesian {
        let (s, c) = self.phi.sin_cos();
        FixedCartesian { x: self.r * c, y: self.r * s }
    }

    pub fn to_rotating(self, t: f64, omega: f64) -> RotatingPolar {
        RotatingPolar { r: self.r, psi: normalize_angle(self.phi - omega * t) }
    }
}

impl RotatingCartesian {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn norm(&self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn to_polar(self) -> RotatingPolar {
        let (r, psi) = polar_of(self.u, self.v);
        RotatingPolar { r, psi }
    }

    pub fn to_fixed(self, t: f64, omega: f64) -> FixedCartesian {
        let (s, c) = (omega * t).sin_cos();
        FixedCartesian { x: self.u * c - self.v * s, y: self.u * s + self.v * c }
    }
}

impl RotatingPolar {
    pub fn to_cartesian(self) -> RotatingCartesian {
        let (s, c) = self.psi.sin_cos();
        RotatingCartesian { u: self.r * c, v: self.r * s }
    }

    pub fn to_fixed(self, t: f64, omega: f64) -> FixedPolar {
        FixedPolar { r: self.r, phi: normalize_angle(self.psi + omega * t) }
    }
}

pub fn to_rotating(p: FixedCartesian, t: f64, omega: f64) -> RotatingCartesian {
    p.to_rotating(t, omega)
}

pub fn from_rotating(p: RotatingCartesian, t: f64, omega: f64) -> FixedCartesian {
    p.to_fixed(t, omega)
}

/// Coordinate frame tag for states and trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    FixedCartesian,
    FixedPolar,
    RotatingCartesian,
    RotatingPolar,
}

impl Frame {
    pub fn is_rotating(self) -> bool {
        matches!(self, Frame::RotatingCartesian | Frame::RotatingPolar)
    }

    pub fn is_polar(self) -> bool {
        matches!(self, Frame::FixedPolar | Frame::RotatingPolar)
    }
}

/// Converts one coordinate pair between frames at time `t`.
pub fn convert_pair(p: [f64; 2], from: Frame, to: Frame, t: f64, omega: f64) -> [f64; 2] {
    let fixed = match from {
        Frame::FixedCartesian => FixedCartesian::new(p[0], p[1]),
        Frame::FixedPolar => FixedPolar { r: p[0], phi: p[1] }.to_cartesian(),
        Frame::RotatingCartesian => RotatingCartesian::new(p[0], p[1]).to_fixed(t, omega),
        Frame::RotatingPolar => RotatingPolar { r: p[0], psi: p[1] }.to_cartesian().to_fixed(t, omega),
    };
    match to {
        Frame::FixedCartesian => [fixed.x, fixed.y],
        Frame::FixedPolar => {
            let q = fixed.to_polar();
            [q.r, q.phi]
        }
        Frame::RotatingCartesian => {
            let q = fixed.to_rotating(t, omega);
            [q.u, q.v]
        }
        Frame::RotatingPolar => {
            let q = fixed.to_rotating(t, omega).to_polar();
            [q.r, q.psi]
        }
    }
}

/// Positions of all evaders at one instant. Index 0 is the evader that was
/// farthest from the target at `t = 0`; the order never changes during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub t: f64,
    pub frame: Frame,
    pub evaders: Vec<[f64; 2]>,
}

impl SwarmState {
    pub fn new(t: f64, frame: Frame, evaders: Vec<[f64; 2]>) -> Self {
        Self { t, frame, evaders }
    }

    pub fn n(&self) -> usize {
        self.evaders.len()
    }

    pub fn to_frame(&self, frame: Frame, omega: f64) -> SwarmState {
        let evaders = self
            .evaders
            .iter()
            .map(|&p| convert_pair(p, self.frame, frame, self.t, omega))
            .collect();
        SwarmState { t: self.t, frame, evaders }
    }

    /// Flat `(a0, b0, a1, b1, ...)` layout used by the integrators.
    pub fn flatten(&self) -> Vec<f64> {
        self.evaders.iter().flat_map(|p| p.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub spiral_ok: bool,
    /// `ln(2 k1^2 R^2) / (2 k1)`; `None` when `k1 = 0` or `2 k1^2 R^2 <= 1`.
    pub kappa_bound: Option<f64>,
    pub circular_ok: bool,
    /// `k / (omega R^3)`.
    pub ratio: f64,
}

pub fn spiral_kappa_bound(k1: f64, pursuer_radius: f64) -> Option<f64> {
    let g = 2.0 * k1 * k1 * pursuer_radius * pursuer_radius;
    if k1 > 0.0 && g > 1.0 {
        Some(g.ln() / (2.0 * k1))
    } else {
        None
    }
}

pub fn check_admissibility(params: &PursuitParams) -> AdmissibilityReport {
    let kappa_bound = spiral_kappa_bound(params.k1, params.pursuer_radius);
    let spiral_ok = kappa_bound.is_some_and(|c| params.kappa < c);
    let ratio = params.k / (params.omega * params.pursuer_radius.powi(3));
    let circular_ok = ratio > 0.0 && ratio < CIRCULAR_RATIO_BOUND;
    AdmissibilityReport { spiral_ok, kappa_bound, circular_ok, ratio }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn ratio_bound_constant() {
        assert!((CIRCULAR_RATIO_BOUND - 2.0 / (3.0 * 3f64.sqrt())).abs() < 1e-16);
    }

    #[test]
    fn rotation_examples() {
        let q = to_rotating(FixedCartesian::new(1.0, 0.0), 0.0, 3.0);
        assert_eq!((q.u, q.v), (1.0, 0.0));
        let q = to_rotating(FixedCartesian::new(0.0, 1.0), FRAC_PI_2, 1.0);
        assert!((q.u - 1.0).abs() < 1e-15 && q.v.abs() < 1e-15);
        let p = FixedCartesian::new(0.3, -0.7);
        let back = from_rotating(to_rotating(p, 1.234, 1.0), 1.234, 1.0);
        assert!((back.x - 0.3).abs() < 1e-12 && (back.y + 0.7).abs() < 1e-12);
    }

    #[test]
    fn polar_examples() {
        let c = FixedPolar { r: 2.0, phi: 0.0 }.to_cartesian();
        assert_eq!((c.x, c.y), (2.0, 0.0));
        let c = FixedPolar { r: 1.0, phi: FRAC_PI_2 }.to_cartesian();
        assert!(c.x.abs() < 1e-15 && (c.y - 1.0).abs() < 1e-15);
        let p = FixedCartesian::new(1.0, 1.0).to_polar();
        assert!((p.r - 2f64.sqrt()).abs() < 1e-15);
        assert!((p.phi - PI / 4.0).abs() < 1e-15);
        let z = FixedCartesian::new(0.0, 0.0).to_polar();
        assert_eq!((z.r, z.phi), (0.0, 0.0));
    }

    #[test]
    fn angle_normalization_half_open() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
        assert!(angle_diff(3.1, -3.1).abs() < 0.1);
    }

    #[test]
    fn admissibility_examples() {
        let p = PursuitParams::spiral(1.0, 1.0, 2.0, 2.0, 1.0).unwrap();
        let rep = check_admissibility(&p);
        assert!(rep.spiral_ok);
        assert!((rep.kappa_bound.unwrap() - 8f64.ln() / 2.0).abs() < 1e-15);
        assert!((rep.kappa_bound.unwrap() - 1.0397).abs() < 1e-4);

        let p = PursuitParams::circular(1.0, 2.0, 2.0, 1.0).unwrap();
        let rep = check_admissibility(&p);
        assert_eq!(rep.ratio, 0.0625);
        assert!(rep.circular_ok);
        assert!(!rep.spiral_ok);
        assert!(rep.kappa_bound.is_none());

        let p = PursuitParams::spiral(1.0, 0.1, 2.0, 2.0, 1.0).unwrap();
        let rep = check_admissibility(&p);
        assert!(!rep.spiral_ok);
        assert!(rep.kappa_bound.is_none());
    }

    #[test]
    fn kappa_beyond_bound_is_rejected() {
        let p = PursuitParams::spiral(1.0, 1.0, 2.0, 2.0, 1.05).unwrap();
        assert!(!check_admissibility(&p).spiral_ok);
    }

    #[test]
    fn parameter_validation() {
        assert!(PursuitParams::circular(1.0, 2.0, 0.0, 1.0).is_err());
        assert!(PursuitParams::spiral(1.0, 0.0, 2.0, 1.0, 1.0).is_err());
        let bad = PursuitParams { k1: 0.5, ..PursuitParams::circular(1.0, 2.0, 1.0, 1.0).unwrap() };
        assert_eq!(
            bad.validate(),
            Err(ModelError::InvalidParam { field: "k1", reason: "must be 0 in circular mode".into() })
        );
    }

    #[test]
    fn swarm_frame_roundtrip() {
        let s = SwarmState::new(0.7, Frame::FixedCartesian, vec![[0.5, 0.1], [-0.2, 0.3]]);
        let back = s.to_frame(Frame::RotatingPolar, 2.0).to_frame(Frame::FixedCartesian, 2.0);
        for (a, b) in s.evaders.iter().zip(&back.evaders) {
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
    }
}
