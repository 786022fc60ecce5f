//! Deterministic ODE integration and convergence detection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::model::{angle_diff, convert_pair, Frame, PursuitParams, RotatingPolar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("invalid integrator setting `{field}`: {reason}")]
    InvalidSettings { field: &'static str, reason: String },
    #[error("convergence to a fixed point is undefined in the {0:?} frame")]
    Frame(Frame),
    #[error("window {window} exceeds trajectory span {span}")]
    Window { window: f64, span: f64 },
    #[error("{count} targets supplied for {n} evaders")]
    Targets { count: usize, n: usize },
    #[error("integration interrupted at t = {t}: {source}")]
    Model { t: f64, source: DynamicsError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    Rk4 { step: f64 },
    Rk45 { rel_tol: f64, abs_tol: f64, max_step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub method: Method,
    pub t_end: f64,
    pub record_every: f64,
}

impl IntegratorSettings {
    pub fn rk4(step: f64, t_end: f64, record_every: f64) -> Self {
        Self { method: Method::Rk4 { step }, t_end, record_every }
    }

    pub fn rk45(rel_tol: f64, abs_tol: f64, max_step: f64, t_end: f64, record_every: f64) -> Self {
        Self { method: Method::Rk45 { rel_tol, abs_tol, max_step }, t_end, record_every }
    }

    /// RK4 with a thousand steps per rotation period.
    pub fn default_for(params: &PursuitParams, t_end: f64) -> Self {
        let period = params.period();
        Self::rk4(1e-3 * period, t_end, 0.02 * period)
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let check = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(IntegrateError::InvalidSettings { field, reason: "must be > 0".into() })
            }
        };
        check("t_end", self.t_end)?;
        check("record_every", self.record_every)?;
        match self.method {
            Method::Rk4 { step } => check("step", step),
            Method::Rk45 { rel_tol, abs_tol, max_step } => {
                check("rel_tol", rel_tol)?;
                check("abs_tol", abs_tol)?;
                check("max_step", max_step)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Converged,
    Singular { index: usize, t: f64 },
    DomainError { index: usize, t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub frame: Frame,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub termination: Termination,
    /// The model error that stopped the run, if any.
    pub error: Option<DynamicsError>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.states.first().map_or(0, |s| s.len() / 2)
    }

    pub fn last(&self) -> (f64, &[f64]) {
        (*self.times.last().unwrap(), self.states.last().unwrap())
    }

    pub fn span(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// `Err` when the run was cut short by the model.
    pub fn check(&self) -> Result<(), IntegrateError> {
        match (self.error, self.termination) {
            (Some(source), Termination::Singular { t, .. } | Termination::DomainError { t, .. }) => {
                Err(IntegrateError::Model { t, source })
            }
            _ => Ok(()),
        }
    }

    /// Re-expresses every sample in another frame.
    pub fn to_frame(&self, frame: Frame, omega: f64) -> Trajectory {
        let states = self
            .times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| {
                s.chunks_exact(2)
                    .flat_map(|p| convert_pair([p[0], p[1]], self.frame, frame, t, omega))
                    .collect()
            })
            .collect();
        Trajectory { frame, times: self.times.clone(), states, termination: self.termination, error: self.error }
    }
}

/// Integrates `rhs` from `(t0, s0)` to `t0 + settings.t_end`.
pub fn integrate<F>(rhs: F, frame: Frame, t0: f64, s0: &[f64], settings: &IntegratorSettings) -> Result<Trajectory, IntegrateError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), DynamicsError>,
{
    integrate_until(rhs, frame, t0, s0, settings, |_, _| false)
}

/// As [`integrate`], but stops with [`Termination::Converged`] as soon as
/// `stop` returns true after an accepted step.
pub fn integrate_until<F, S>(
    mut rhs: F,
    frame: Frame,
    t0: f64,
    s0: &[f64],
    settings: &IntegratorSettings,
    mut stop: S,
) -> Result<Trajectory, IntegrateError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), DynamicsError>,
    S: FnMut(f64, &[f64]) -> bool,
{
    settings.validate()?;
    let dim = s0.len();
    let mut traj = Trajectory {
        frame,
        times: vec![t0],
        states: vec![s0.to_vec()],
        termination: Termination::Completed,
        error: None,
    };
    if stop(t0, s0) {
        traj.termination = Termination::Converged;
        return Ok(traj);
    }

    let mut stepper = Stepper::new(settings.method, dim);
    let mut t = t0;
    let mut y = s0.to_vec();
    let t_final = t0 + settings.t_end;
    let records = (settings.t_end / settings.record_every - 1e-9).ceil().max(1.0) as usize;

    for j in 1..=records {
        let t_rec = if j == records { t_final } else { t0 + j as f64 * settings.record_every };
        match stepper.advance(&mut rhs, &mut t, &mut y, t_rec, &mut stop) {
            Ok(false) => {
                traj.times.push(t);
                traj.states.push(y.clone());
            }
            Ok(true) => {
                traj.times.push(t);
                traj.states.push(y.clone());
                traj.termination = Termination::Converged;
                return Ok(traj);
            }
            Err(e) => {
                if t > *traj.times.last().unwrap() {
                    traj.times.push(t);
                    traj.states.push(y.clone());
                }
                traj.termination = match e {
                    DynamicsError::Domain { index, .. } => Termination::DomainError { index, t },
                    DynamicsError::Singularity { index, .. } => Termination::Singular { index, t },
                    DynamicsError::Layout { .. } => Termination::DomainError { index: 0, t },
                };
                traj.error = Some(e);
                return Ok(traj);
            }
        }
    }
    Ok(traj)
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Stepper {
    method: Method,
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    h: f64,
}

impl Stepper {
    fn new(method: Method, dim: usize) -> Self {
        let stages = match method {
            Method::Rk4 { .. } => 4,
            Method::Rk45 { .. } => 7,
        };
        let h = match method {
            Method::Rk4 { step } => step,
            Method::Rk45 { max_step, .. } => max_step.min(1e-2),
        };
        Self { method, k: vec![vec![0.0; dim]; stages], tmp: vec![0.0; dim], y_new: vec![0.0; dim], h }
    }

    /// Advances `(t, y)` to exactly `t_target`. Returns `Ok(true)` if `stop` fired.
    fn advance<F, S>(&mut self, rhs: &mut F, t: &mut f64, y: &mut Vec<f64>, t_target: f64, stop: &mut S) -> Result<bool, DynamicsError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), DynamicsError>,
        S: FnMut(f64, &[f64]) -> bool,
    {
        match self.method {
            Method::Rk4 { step } => {
                let t_start = *t;
                let span = t_target - t_start;
                let m = (span / step - 1e-9).ceil().max(1.0) as usize;
                let h = span / m as f64;
                for i in 1..=m {
                    self.rk4_step(rhs, *t, y, h)?;
                    *t = if i == m { t_target } else { t_start + i as f64 * h };
                    if stop(*t, y) {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Method::Rk45 { rel_tol, abs_tol, max_step } => {
                while *t < t_target {
                    let remaining = t_target - *t;
                    let h = self.h.min(max_step).min(remaining);
                    let last = h >= remaining;
                    let err = self.dp_step(rhs, *t, y, h, rel_tol, abs_tol)?;
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    if err <= 1.0 {
                        *t = if last { t_target } else { *t + h };
                        std::mem::swap(y, &mut self.y_new);
                        if !last {
                            self.h = h * factor;
                        }
                        if stop(*t, y) {
                            return Ok(true);
                        }
                    } else {
                        self.h = h * factor.min(1.0);
                    }
                }
                Ok(false)
            }
        }
    }

    fn rk4_step<F>(&mut self, rhs: &mut F, t: f64, y: &mut [f64], h: f64) -> Result<(), DynamicsError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), DynamicsError>,
    {
        let n = y.len();
        rhs(t, y, &mut self.k[0])?;
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k[0][i];
        }
        rhs(t + 0.5 * h, &self.tmp, &mut self.k[1])?;
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k[1][i];
        }
        rhs(t + 0.5 * h, &self.tmp, &mut self.k[2])?;
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k[2][i];
        }
        rhs(t + h, &self.tmp, &mut self.k[3])?;
        for i in 0..n {
            y[i] += h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
        Ok(())
    }

    /// One trial step into `y_new`; returns the scaled error norm.
    fn dp_step<F>(&mut self, rhs: &mut F, t: f64, y: &[f64], h: f64, rtol: f64, atol: f64) -> Result<f64, DynamicsError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), DynamicsError>,
    {
        let n = y.len();
        rhs(t, y, &mut self.k[0])?;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for j in 0..s {
                    acc += h * DP_A[s][j] * self.k[j][i];
                }
                self.tmp[i] = acc;
            }
            rhs(t + DP_C[s] * h, &self.tmp, &mut self.k[s])?;
        }
        let mut sum = 0.0;
        for i in 0..n {
            let mut hi = y[i];
            let mut lo = y[i];
            for s in 0..7 {
                hi += h * DP_B[s] * self.k[s][i];
                lo += h * DP_B4[s] * self.k[s][i];
            }
            self.y_new[i] = hi;
            let sc = atol + rtol * y[i].abs().max(hi.abs());
            sum += ((hi - lo) / sc).powi(2);
        }
        Ok((sum / n as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// First time after which every sample stays within `tol`.
    pub t_converged: Option<f64>,
    /// Largest sup-norm distance to the target over the trailing window.
    pub final_error: f64,
}

/// Sup-norm distance of one sample to per-evader targets in `(r, psi)`, with
/// the angle compared modulo `2 pi`.
pub fn target_distance(frame: Frame, state: &[f64], targets: &[RotatingPolar]) -> f64 {
    state
        .chunks_exact(2)
        .enumerate()
        .map(|(i, p)| {
            let tgt = targets[if targets.len() == 1 { 0 } else { i }];
            let q = convert_pair([p[0], p[1]], frame, Frame::RotatingPolar, 0.0, 0.0);
            (q[0] - tgt.r).abs().max(angle_diff(q[1], tgt.psi).abs())
        })
        .fold(0.0, f64::max)
}

/// Checks whether a rotating-frame trajectory settles at the targets.
///
/// `targets` holds one point per evader, or a single point shared by all.
pub fn detect_convergence(traj: &Trajectory, targets: &[RotatingPolar], tol: f64, window: f64) -> Result<ConvergenceReport, IntegrateError> {
    if !traj.frame.is_rotating() {
        return Err(IntegrateError::Frame(traj.frame));
    }
    let n = traj.n();
    if targets.len() != 1 && targets.len() != n {
        return Err(IntegrateError::Targets { count: targets.len(), n });
    }
    let span = traj.span();
    if window > span + 1e-12 {
        return Err(IntegrateError::Window { window, span });
    }
    let errors: Vec<f64> = traj.states.iter().map(|s| target_distance(traj.frame, s, targets)).collect();
    let t_last = *traj.times.last().unwrap();
    let final_error = traj
        .times
        .iter()
        .zip(&errors)
        .filter(|(&t, _)| t >= t_last - window - 1e-12)
        .map(|(_, &e)| e)
        .fold(0.0, f64::max);
    let converged = final_error <= tol;
    let t_converged = if converged {
        let first_inside = errors.iter().rposition(|&e| e > tol).map_or(0, |i| i + 1);
        Some(traj.times[first_inside])
    } else {
        None
    };
    Ok(ConvergenceReport { converged, t_converged, final_error })
}

/// Streaming form of [`detect_convergence`] for early termination: fires
/// once the state has stayed within `tol` of the targets for `window`.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    frame: Frame,
    targets: Vec<RotatingPolar>,
    tol: f64,
    window: f64,
    inside_since: Option<f64>,
}

impl ConvergenceMonitor {
    pub fn new(frame: Frame, targets: Vec<RotatingPolar>, tol: f64, window: f64) -> Self {
        Self { frame, targets, tol, window, inside_since: None }
    }

    pub fn update(&mut self, t: f64, state: &[f64]) -> bool {
        if target_distance(self.frame, state, &self.targets) <= self.tol {
            let since = *self.inside_since.get_or_insert(t);
            t - since >= self.window
        } else {
            self.inside_since = None;
            false
        }
    }

    pub fn inside_since(&self) -> Option<f64> {
        self.inside_since
    }
}
