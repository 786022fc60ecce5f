//! Right-hand sides of the coupled pursuer/evader system.
//!
//! The pursuer is not integrated: its position is an explicit function of
//! time and of the radius of evader 0. Every right-hand side works on a flat
//! state slice laid out as `(a0, b0, a1, b1, ...)`, where `(a, b)` is `(x, y)`,
//! `(r, phi)`, `(u, v)` or `(r, psi)` depending on the frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FixedCartesian, Frame, PursuitParams};

/// Pursuer/evader distance below which the inverse-square law is treated as a collision.
pub const D_MIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DynamicsError {
    #[error("pursuer/evader collision: evader {index} at distance {distance:e}")]
    Singularity { index: usize, distance: f64 },
    #[error("evader {index} has non-positive radius {r:e} in a polar frame")]
    Domain { index: usize, r: f64 },
    #[error("state length {len} is not a positive multiple of 2")]
    Layout { len: usize },
}

/// Flat state vector tagged with its frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub frame: Frame,
    pub data: Vec<f64>,
}

impl StateVector {
    pub fn new(frame: Frame, data: Vec<f64>) -> Result<Self, DynamicsError> {
        check_layout(&data)?;
        Ok(Self { frame, data })
    }

    /// Every evader placed on the same point.
    pub fn uniform(frame: Frame, pair: [f64; 2], n: usize) -> Self {
        Self { frame, data: (0..n).flat_map(|_| pair).collect() }
    }

    pub fn n(&self) -> usize {
        self.data.len() / 2
    }

    pub fn pair(&self, i: usize) -> [f64; 2] {
        [self.data[2 * i], self.data[2 * i + 1]]
    }
}

fn check_layout(s: &[f64]) -> Result<(), DynamicsError> {
    if s.is_empty() || s.len() % 2 != 0 {
        Err(DynamicsError::Layout { len: s.len() })
    } else {
        Ok(())
    }
}

/// Evader velocity under inverse-square repulsion from the pursuer.
pub fn evader_velocity(e: FixedCartesian, p: FixedCartesian, k: f64) -> Result<[f64; 2], DynamicsError> {
    let (dx, dy) = (e.x - p.x, e.y - p.y);
    let d = dx.hypot(dy);
    if d <= D_MIN {
        return Err(DynamicsError::Singularity { index: 0, distance: d });
    }
    let s = k / (d * d * d);
    Ok([s * dx, s * dy])
}

/// Current pursuer radius `R exp(k1 (r0 - kappa))`.
pub fn pursuer_radius(r0: f64, params: &PursuitParams) -> f64 {
    if params.k1 == 0.0 {
        params.pursuer_radius
    } else {
        params.pursuer_radius * (params.k1 * (r0 - params.kappa)).exp()
    }
}

pub fn pursuer_position(t: f64, r0: f64, params: &PursuitParams) -> FixedCartesian {
    let rp = pursuer_radius(r0, params);
    let (s, c) = (params.omega * t).sin_cos();
    FixedCartesian { x: rp * c, y: rp * s }
}

/// Fixed Cartesian frame: the inverse-square law applied with the pursuer law substituted.
pub fn rhs_fixed_cartesian(params: &PursuitParams, t: f64, s: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
    check_layout(s)?;
    let r0 = s[0].hypot(s[1]);
    let p = pursuer_position(t, r0, params);
    for (i, (e, o)) in s.chunks_exact(2).zip(out.chunks_exact_mut(2)).enumerate() {
        let vel = evader_velocity(FixedCartesian::new(e[0], e[1]), p, params.k).map_err(|err| tag(err, i))?;
        o.copy_from_slice(&vel);
    }
    Ok(())
}

fn tag(err: DynamicsError, index: usize) -> DynamicsError {
    match err {
        DynamicsError::Singularity { distance, .. } => DynamicsError::Singularity { index, distance },
        DynamicsError::Domain { r, .. } => DynamicsError::Domain { index, r },
        other => other,
    }
}

/// `(r_dot, angle_dot + omega)` for one evader in polar form, where `angle` is
/// measured from the pursuer direction.
fn polar_terms(r: f64, rel_angle: f64, rp: f64, k: f64, index: usize) -> Result<(f64, f64), DynamicsError> {
    if r <= 0.0 {
        return Err(DynamicsError::Domain { index, r });
    }
    let (sin, cos) = rel_angle.sin_cos();
    let d2 = (r * r + rp * rp - 2.0 * r * rp * cos).max(0.0);
    let d = d2.sqrt();
    if d <= D_MIN {
        return Err(DynamicsError::Singularity { index, distance: d });
    }
    let d3 = d2 * d;
    Ok((k * (r - rp * cos) / d3, k * rp * sin / (r * d3)))
}

/// Rotating polar frame; autonomous.
pub fn rhs_rotating_polar(params: &PursuitParams, s: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
    check_layout(s)?;
    let rp = pursuer_radius(s[0], params);
    for (i, (e, o)) in s.chunks_exact(2).zip(out.chunks_exact_mut(2)).enumerate() {
        let (rdot, adot) = polar_terms(e[0], e[1], rp, params.k, i)?;
        o[0] = rdot;
        o[1] = adot - params.omega;
    }
    Ok(())
}

/// Rotating Cartesian frame; autonomous and smooth through the target point.
pub fn rhs_rotating_cartesian(params: &PursuitParams, s: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
    check_layout(s)?;
    let rp = pursuer_radius(s[0].hypot(s[1]), params);
    let (k, w) = (params.k, params.omega);
    for (i, (e, o)) in s.chunks_exact(2).zip(out.chunks_exact_mut(2)).enumerate() {
        let (du, v) = (e[0] - rp, e[1]);
        let d = du.hypot(v);
        if d <= D_MIN {
            return Err(DynamicsError::Singularity { index: i, distance: d });
        }
        let d3 = d * d * d;
        o[0] = k * du / d3 + w * v;
        o[1] = k * v / d3 - w * e[0];
    }
    Ok(())
}

/// Fixed polar frame; explicitly time-varying.
pub fn rhs_fixed_polar(params: &PursuitParams, t: f64, s: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
    check_layout(s)?;
    let rp = pursuer_radius(s[0], params);
    let wt = params.omega * t;
    for (i, (e, o)) in s.chunks_exact(2).zip(out.chunks_exact_mut(2)).enumerate() {
        let (rdot, adot) = polar_terms(e[0], e[1] - wt, rp, params.k, i)?;
        o[0] = rdot;
        o[1] = adot;
    }
    Ok(())
}

/// The herding system in a chosen frame, usable as an integrator right-hand side.
#[derive(Debug, Clone, Copy)]
pub struct HerdingSystem {
    pub params: PursuitParams,
    pub frame: Frame,
}

impl HerdingSystem {
    pub fn new(params: PursuitParams, frame: Frame) -> Self {
        Self { params, frame }
    }

    pub fn eval(&self, t: f64, s: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        match self.frame {
            Frame::FixedCartesian => rhs_fixed_cartesian(&self.params, t, s, out),
            Frame::FixedPolar => rhs_fixed_polar(&self.params, t, s, out),
            Frame::RotatingCartesian => rhs_rotating_cartesian(&self.params, s, out),
            Frame::RotatingPolar => rhs_rotating_polar(&self.params, s, out),
        }
    }

    pub fn derivative(&self, t: f64, s: &StateVector) -> Result<Vec<f64>, DynamicsError> {
        let mut out = vec![0.0; s.data.len()];
        self.eval(t, &s.data, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mode, PursuitParams};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn circ(k: f64, r: f64, w: f64) -> PursuitParams {
        PursuitParams::circular(k, r, w, 1.0).unwrap()
    }

    #[test]
    fn evader_velocity_examples() {
        let v = evader_velocity(FixedCartesian::new(1.0, 0.0), FixedCartesian::new(2.0, 0.0), 1.0).unwrap();
        assert_eq!(v, [-1.0, 0.0]);
        let v = evader_velocity(FixedCartesian::new(0.0, 2.0), FixedCartesian::new(0.0, 0.0), 1.0).unwrap();
        assert_eq!(v, [0.0, 0.25]);
        let e = evader_velocity(FixedCartesian::new(1.0, 0.0), FixedCartesian::new(1.0, 0.0), 1.0);
        assert!(matches!(e, Err(DynamicsError::Singularity { .. })));
    }

    #[test]
    fn velocity_linear_in_k() {
        let e = FixedCartesian::new(0.3, -0.4);
        let p = FixedCartesian::new(1.7, 0.2);
        let a = evader_velocity(e, p, 0.8).unwrap();
        let b = evader_velocity(e, p, 1.6).unwrap();
        assert_eq!([2.0 * a[0], 2.0 * a[1]], b);
    }

    #[test]
    fn pursuer_examples() {
        let p = PursuitParams::spiral(1.0, 1.0, 2.0, 2.0, 1.0).unwrap();
        assert_eq!(pursuer_position(0.0, 1.0, &p), FixedCartesian::new(2.0, 0.0));
        let c = circ(1.0, 2.0, 1.0);
        let q = pursuer_position(PI, 0.3, &c);
        assert!((q.x + 2.0).abs() < 1e-15 && q.y.abs() < 1e-15);
        // radius at the reported equilibrium of the omega = 2 spiral run
        assert!((pursuer_radius(0.4458, &p) - 1.149).abs() < 1e-3);
        assert_eq!(p.mode, Mode::Spiral);
    }

    #[test]
    fn rotating_polar_hand_value() {
        let p = circ(1.0, 2.0, 1.0);
        let mut out = [0.0; 2];
        rhs_rotating_polar(&p, &[2.0, FRAC_PI_2], &mut out).unwrap();
        let d3 = 8f64.powf(1.5);
        assert!((out[0] - 2.0 / d3).abs() < 1e-15);
        assert!((out[0] - 0.08839).abs() < 1e-5);
        assert!((out[1] - (2.0 / (2.0 * d3) - 1.0)).abs() < 1e-15);
        assert!((out[1] + 0.95581).abs() < 1e-5);
    }

    #[test]
    fn rotating_cartesian_hand_value() {
        let p = circ(1.0, 2.0, 1.0);
        let mut out = [0.0; 2];
        rhs_rotating_cartesian(&p, &[0.0, 1.0], &mut out).unwrap();
        let d3 = 5f64.powf(1.5);
        assert!((out[0] - (-2.0 / d3 + 1.0)).abs() < 1e-15);
        assert!((out[0] - 0.82111).abs() < 1e-5);
        assert!((out[1] - 1.0 / d3).abs() < 1e-15);
        assert!((out[1] - 0.089443).abs() < 1e-6);
    }

    #[test]
    fn fixed_polar_matches_rotating_at_t0() {
        let p = PursuitParams::spiral(1.0, 1.0, 2.0, 2.0, 1.0).unwrap();
        let s = [0.9, 0.4, 0.5, -1.2];
        let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
        rhs_fixed_polar(&p, 0.0, &s, &mut a).unwrap();
        rhs_rotating_polar(&p, &s, &mut b).unwrap();
        for i in 0..2 {
            assert_eq!(a[2 * i], b[2 * i]);
            assert!((a[2 * i + 1] - (b[2 * i + 1] + p.omega)).abs() < 1e-14);
        }
    }

    #[test]
    fn evader_zero_is_unaffected_by_others() {
        let p = PursuitParams::spiral(1.0, 1.0, 2.0, 2.0, 1.0).unwrap();
        for frame in [Frame::FixedCartesian, Frame::FixedPolar, Frame::RotatingCartesian, Frame::RotatingPolar] {
            let sys = HerdingSystem::new(p, frame);
            let a = sys.derivative(0.3, &StateVector::new(frame, vec![0.9, 0.4, 0.5, -1.2]).unwrap()).unwrap();
            let b = sys.derivative(0.3, &StateVector::new(frame, vec![0.9, 0.4, 0.2, 2.5]).unwrap()).unwrap();
            assert_eq!(a[..2], b[..2]);
        }
    }

    #[test]
    fn polar_errors() {
        let p = circ(1.0, 2.0, 1.0);
        let mut out = [0.0; 4];
        assert_eq!(
            rhs_rotating_polar(&p, &[0.5, 0.1, 0.0, 0.2], &mut out),
            Err(DynamicsError::Domain { index: 1, r: 0.0 })
        );
        let e = rhs_rotating_polar(&p, &[0.5, 0.1, 2.0, 0.0], &mut out);
        assert!(matches!(e, Err(DynamicsError::Singularity { index: 1, .. })));
        let e = rhs_rotating_cartesian(&p, &[2.0, 0.0], &mut out[..2]);
        assert!(matches!(e, Err(DynamicsError::Singularity { index: 0, .. })));
        assert!(StateVector::new(Frame::RotatingPolar, vec![1.0]).is_err());
    }

    #[test]
    fn circular_mode_permutes_with_indices() {
        let p = circ(1.0, 2.0, 1.0);
        let a = [0.5, 0.2, 0.8, -0.3, 0.1, 1.1];
        let b = [0.5, 0.2, 0.1, 1.1, 0.8, -0.3];
        let (mut da, mut db) = ([0.0; 6], [0.0; 6]);
        rhs_rotating_polar(&p, &a, &mut da).unwrap();
        rhs_rotating_polar(&p, &b, &mut db).unwrap();
        assert_eq!(da[2..4], db[4..6]);
        assert_eq!(da[4..6], db[2..4]);
    }
}
