//! Linearization and eigenvalue classification of equilibria.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{rhs_rotating_polar, DynamicsError};
use crate::equilibria::Equilibrium;
use crate::model::{Mode, PursuitParams};

/// Eigenvalues with real part inside `[-MARGIN_TOL, MARGIN_TOL]` are treated as marginal.
pub const MARGIN_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("equilibrium radius {r_star} must lie in (0, R = {pursuer_radius})")]
    Domain { r_star: f64, pursuer_radius: f64 },
    #[error("closed-form eigenvalues require circular mode")]
    WrongMode,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    AsymptoticallyStable,
    Saddle,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub eigenvalues: Vec<Complex64>,
    pub class: StabilityClass,
    /// Largest real part.
    pub margin: f64,
}

impl StabilityVerdict {
    pub fn from_eigenvalues(mut eigenvalues: Vec<Complex64>) -> Self {
        eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
        let margin = eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        let real = |l: &&Complex64| l.im.abs() <= MARGIN_TOL;
        let pos = eigenvalues.iter().filter(real).any(|l| l.re > MARGIN_TOL);
        let neg = eigenvalues.iter().filter(real).any(|l| l.re < -MARGIN_TOL);
        let class = if margin < -MARGIN_TOL {
            StabilityClass::AsymptoticallyStable
        } else if pos && neg {
            StabilityClass::Saddle
        } else if margin.abs() <= MARGIN_TOL {
            StabilityClass::Marginal
        } else {
            StabilityClass::Unstable
        };
        Self { eigenvalues, class, margin }
    }

    pub fn is_hurwitz(&self) -> bool {
        self.class == StabilityClass::AsymptoticallyStable
    }
}

/// Closed-form eigenvalues of the circular-law linearization at radius `r_star`,
/// in order `(+root, -root)` of the square root.
pub fn eigenvalues_circular(params: &PursuitParams, r_star: f64) -> Result<(Complex64, Complex64), StabilityError> {
    if params.mode != Mode::Circular {
        return Err(StabilityError::WrongMode);
    }
    let r = params.pursuer_radius;
    if !(r_star > 0.0 && r_star < r) {
        return Err(StabilityError::Domain { r_star, pursuer_radius: r });
    }
    let (k, w) = (params.k, params.omega);
    let g = r * r - r_star * r_star;
    let disc = Complex64::new(9.0 * k * k - 4.0 * w * w * g.powi(3), 0.0).sqrt();
    let den = 2.0 * g.powf(1.5);
    Ok(((disc - k) / den, (-disc - k) / den))
}

/// Circular-law Jacobian of `(r', psi')` with respect to `(r, psi)` at an
/// equilibrium, written through `s = R sin(psi)` (the pursuer distance there).
pub fn jacobian_circular(params: &PursuitParams, r_star: f64, psi_star: f64) -> Matrix2<f64> {
    let k = params.k;
    let s = params.pursuer_radius * psi_star.sin();
    let s2 = s * s;
    let s3 = s2 * s;
    Matrix2::new(k / s3, k / s2, -k / (r_star * r_star * s2), -2.0 * k / s3)
}

/// Central-difference Jacobian of `f` at `point`.
///
/// The default step is `max(1e-6, 1e-7 |point|)`, rounded down to a power of
/// two so that `x ± h` is exact.
pub fn jacobian_numeric<F, E>(f: F, point: &[f64], step: Option<f64>) -> Result<DMatrix<f64>, E>
where
    F: Fn(&[f64], &mut [f64]) -> Result<(), E>,
{
    let n = point.len();
    let norm = point.iter().map(|x| x * x).sum::<f64>().sqrt();
    let h = step.unwrap_or_else(|| {
        let raw = 1e-6f64.max(1e-7 * norm);
        2f64.powi(raw.log2().floor() as i32)
    });
    let mut jac = DMatrix::zeros(n, n);
    let mut x = point.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        x[j] = point[j] + h;
        f(&x, &mut fp)?;
        x[j] = point[j] - h;
        f(&x, &mut fm)?;
        x[j] = point[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Jacobian of the `n`-evader rotating polar system with every evader at `eq`.
pub fn coupled_jacobian(params: &PursuitParams, eq: &Equilibrium, n: usize) -> Result<DMatrix<f64>, DynamicsError> {
    let point: Vec<f64> = (0..n).flat_map(|_| [eq.r_star, eq.psi_star]).collect();
    jacobian_numeric(|s, out| rhs_rotating_polar(params, s, out), &point, None)
}

/// Classify `eq` as an equilibrium of the coupled `n`-evader system.
pub fn classify(params: &PursuitParams, eq: &Equilibrium, n: usize) -> Result<StabilityVerdict, DynamicsError> {
    let jac = coupled_jacobian(params, eq, n.max(1))?;
    Ok(StabilityVerdict::from_eigenvalues(eigenvalues(&jac)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{multi_evader_equilibrium, solve_circular};

    fn circ() -> PursuitParams {
        PursuitParams::circular(1.0, 2.0, 1.0, 1.0).unwrap()
    }

    fn close(a: Complex64, re: f64, im: f64, tol: f64) -> bool {
        (a.re - re).abs() < tol && (a.im - im).abs() < tol
    }

    #[test]
    fn closed_form_values() {
        let sol = solve_circular(&circ()).unwrap();
        let (l1, l2) = eigenvalues_circular(&circ(), sol.roots.r_s2).unwrap();
        assert!(close(l1, -0.0640, 0.9813, 1e-3) && close(l2, -0.0640, -0.9813, 1e-3));
        let (l1, l2) = eigenvalues_circular(&circ(), sol.roots.r_s1).unwrap();
        assert!(close(l1, 2.4045, 0.0, 1e-3) && close(l2, -4.9427, 0.0, 1e-3), "{l1} {l2}");
        assert!(eigenvalues_circular(&circ(), 2.0).is_err());
    }

    #[test]
    fn complex_pair_real_part() {
        let p = circ().with_omega(50.0);
        let r = solve_circular(&p).unwrap().roots.r_s2;
        let (l1, l2) = eigenvalues_circular(&p, r).unwrap();
        let expect = -1.0 / (2.0 * (4.0 - r * r).powf(1.5));
        assert!(l1.im != 0.0 && (l1.re - expect).abs() < 1e-14 && (l2.re - expect).abs() < 1e-14);
    }

    #[test]
    fn numeric_matches_closed_form() {
        let p = circ();
        let sol = solve_circular(&p).unwrap();
        for eq in [sol.inner, sol.outer] {
            let jac = coupled_jacobian(&p, &eq, 1).unwrap();
            let closed = jacobian_circular(&p, eq.r_star, eq.psi_star);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((jac[(i, j)] - closed[(i, j)]).abs() < 1e-6, "{i}{j}: {} vs {}", jac[(i, j)], closed[(i, j)]);
                }
            }
            let (l1, l2) = eigenvalues_circular(&p, eq.r_star).unwrap();
            let num = StabilityVerdict::from_eigenvalues(eigenvalues(&jac)).eigenvalues;
            let closed = StabilityVerdict::from_eigenvalues(vec![l1, l2]).eigenvalues;
            for (a, b) in num.iter().zip(&closed) {
                assert!((a - b).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn verdicts() {
        let p = circ();
        let sol = solve_circular(&p).unwrap();
        assert_eq!(classify(&p, &sol.inner, 1).unwrap().class, StabilityClass::AsymptoticallyStable);
        assert_eq!(classify(&p, &sol.outer, 1).unwrap().class, StabilityClass::Saddle);

        let sp = PursuitParams::spiral(1.0, 1.0, 2.0, 2.0, 1.0).unwrap();
        let eq = multi_evader_equilibrium(&sp).unwrap();
        for n in 1..=3 {
            let v = classify(&sp, &eq, n).unwrap();
            assert_eq!(v.eigenvalues.len(), 2 * n);
            assert!(v.is_hurwitz(), "n = {n}: {:?}", v.eigenvalues);
        }
    }

    #[test]
    fn coupled_block_structure() {
        let sp = PursuitParams::spiral(1.0, 1.0, 2.0, 2.0, 1.0).unwrap();
        let eq = multi_evader_equilibrium(&sp).unwrap();
        let j1 = coupled_jacobian(&sp, &eq, 1).unwrap();
        let j3 = coupled_jacobian(&sp, &eq, 3).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(j1[(i, j)], j3[(i, j)]);
            }
        }
        // Evader 0 ignores the others; evader 1 ignores evader 2.
        for i in 0..2 {
            for j in 2..6 {
                assert_eq!(j3[(i, j)], 0.0);
            }
        }
        for i in 2..4 {
            for j in 4..6 {
                assert_eq!(j3[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn numeric_jacobian_trivial_fields() {
        let a = [[1.5, -2.0], [0.25, 3.0]];
        let lin = |x: &[f64], out: &mut [f64]| -> Result<(), ()> {
            out[0] = a[0][0] * x[0] + a[0][1] * x[1];
            out[1] = a[1][0] * x[0] + a[1][1] * x[1];
            Ok(())
        };
        let jac = jacobian_numeric(lin, &[0.3, -1.2], None).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((jac[(i, j)] - a[i][j]).abs() < 1e-8);
            }
        }
        let sq = |x: &[f64], out: &mut [f64]| -> Result<(), ()> {
            out[0] = x[0] * x[0];
            Ok(())
        };
        let jac = jacobian_numeric(sq, &[3.0], None).unwrap();
        assert!((jac[(0, 0)] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn classification_rules() {
        let c = |re, im| Complex64::new(re, im);
        assert_eq!(StabilityVerdict::from_eigenvalues(vec![c(-1.0, 0.0), c(-2.0, 0.0)]).class, StabilityClass::AsymptoticallyStable);
        assert_eq!(StabilityVerdict::from_eigenvalues(vec![c(1.0, 0.0), c(-2.0, 0.0)]).class, StabilityClass::Saddle);
        assert_eq!(StabilityVerdict::from_eigenvalues(vec![c(1.0, 1.0), c(1.0, -1.0)]).class, StabilityClass::Unstable);
        assert_eq!(StabilityVerdict::from_eigenvalues(vec![c(0.0, 1.0), c(0.0, -1.0)]).class, StabilityClass::Marginal);
    }
}
