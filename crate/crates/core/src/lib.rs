//! Simulation and stability analysis of a single pursuer herding a group of
//! evaders toward a target point.
//!
//! Each evader flees the pursuer with speed `k / d^2`. The pursuer circles the
//! target at angular velocity `omega`, either on a fixed circle of radius `R`
//! (circular law) or on a spiral whose radius `R exp(k1 (r0 - kappa))` tracks
//! the evader that started farthest out (spiral law). In a frame rotating with
//! the pursuer the dynamics become autonomous, and herding reduces to
//! convergence to an equilibrium of that frame.
//!
//! - [`model`]: parameters, coordinate frames, admissibility conditions.
//! - [`dynamics`]: right-hand sides in all four frames.
//! - [`integrate`]: RK4 / Dormand–Prince integration and convergence detection.
//! - [`equilibria`]: equilibrium radii and angles for both laws.
//! - [`stability`]: Jacobians and eigenvalue classification.
//! - [`roa`]: certified ellipsoidal regions of attraction, sweeps and brute-force maps.
//! - [`cli`]: scenario files and the `herdlab` command-line tool.

pub mod cli;
pub mod dynamics;
pub mod equilibria;
pub mod integrate;
pub mod model;
pub mod numeric;
pub mod roa;
pub mod stability;

pub use dynamics::{DynamicsError, HerdingSystem, StateVector};
pub use equilibria::{multi_evader_equilibrium, solve_circular, solve_spiral, Equilibrium};
pub use integrate::{detect_convergence, integrate, IntegratorSettings, Trajectory};
pub use model::{check_admissibility, Frame, Mode, PursuitParams};
pub use roa::{optimize_ellipsoid, EllipsoidRegion};
pub use stability::{classify, StabilityClass, StabilityVerdict};
