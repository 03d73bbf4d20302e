//! Unicycle kinematics, input saturation and the simulated world.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{compose, wrap, Pose2};

/// Below this yaw rate the exact-arc update switches to the straight-line limit.
const STRAIGHT_LINE_OMEGA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VehicleError {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("invalid input limits: {0}")]
    BadLimits(String),
}

/// Velocity command `u = (v, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        ControlInput { v, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.omega.is_finite()
    }

    pub fn scaled(&self, k: f64) -> Self {
        ControlInput::new(self.v * k, self.omega * k)
    }
}

/// Velocity box plus acceleration bounds applied per control period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputLimits {
    pub v_max: f64,
    pub omega_max: f64,
    pub a_max: f64,
    pub alpha_max: f64,
}

impl InputLimits {
    pub fn new(v_max: f64, omega_max: f64, a_max: f64, alpha_max: f64) -> Self {
        InputLimits {
            v_max,
            omega_max,
            a_max,
            alpha_max,
        }
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        let all = [self.v_max, self.omega_max, self.a_max, self.alpha_max];
        if all.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(VehicleError::BadLimits(format!("{self:?}")))
        }
    }

    /// Interval of admissible `v` given the previous command, as `(lo, hi)`.
    pub fn v_interval(&self, prev_v: f64, dt: f64) -> (f64, f64) {
        admissible_interval(prev_v, self.v_max, self.a_max * dt)
    }

    pub fn omega_interval(&self, prev_omega: f64, dt: f64) -> (f64, f64) {
        admissible_interval(prev_omega, self.omega_max, self.alpha_max * dt)
    }

    pub fn contains(&self, u: &ControlInput, tol: f64) -> bool {
        u.v.abs() <= self.v_max + tol && u.omega.abs() <= self.omega_max + tol
    }
}

/// Intersection of `[-cap, cap]` with `[prev - step, prev + step]`. When the
/// previous command lies so far outside the velocity box that the two do not
/// meet, the velocity box wins and the interval collapses to the box point
/// closest to `prev`.
fn admissible_interval(prev: f64, cap: f64, step: f64) -> (f64, f64) {
    let lo = (-cap).max(prev - step);
    let hi = cap.min(prev + step);
    if lo <= hi {
        (lo, hi)
    } else {
        let p = prev.clamp(-cap, cap);
        (p, p)
    }
}

/// Projects `u` onto the velocity box intersected with the acceleration box
/// around `prev`.
pub fn clamp_input(u: ControlInput, prev: ControlInput, limits: &InputLimits, dt: f64) -> ControlInput {
    let (vlo, vhi) = limits.v_interval(prev.v, dt);
    let (wlo, whi) = limits.omega_interval(prev.omega, dt);
    ControlInput::new(u.v.clamp(vlo, vhi), u.omega.clamp(wlo, whi))
}

/// Exact-arc integration of the unicycle over `dt` with constant input.
pub fn step_unicycle(pose: &Pose2, u: &ControlInput, dt: f64) -> Result<Pose2, VehicleError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(VehicleError::BadTimeStep(dt));
    }
    if !u.is_finite() || !pose.is_finite() {
        return Err(VehicleError::NonFinite("step_unicycle"));
    }
    Ok(integrate_arc(pose, u, dt))
}

pub(crate) fn integrate_arc(pose: &Pose2, u: &ControlInput, dt: f64) -> Pose2 {
    let th0 = pose.theta;
    let th1 = th0 + u.omega * dt;
    let (dx, dy) = if u.omega.abs() < STRAIGHT_LINE_OMEGA {
        let thm = th0 + 0.5 * u.omega * dt;
        (u.v * dt * thm.cos(), u.v * dt * thm.sin())
    } else {
        let r = u.v / u.omega;
        (r * (th1.sin() - th0.sin()), -r * (th1.cos() - th0.cos()))
    };
    Pose2 {
        x: pose.x + dx,
        y: pose.y + dy,
        theta: wrap(th1),
    }
}

/// Time derivative of the relative configuration `x = x^R_V` of a virtual
/// target moving with `(v_v, omega_v)` seen from a robot driven by `u`.
pub fn error_dynamics(x: &Pose2, u: &ControlInput, v_v: f64, omega_v: f64) -> [f64; 3] {
    let (s, c) = x.theta.sin_cos();
    [
        x.y * u.omega + v_v * c - u.v,
        -x.x * u.omega + v_v * s,
        omega_v - u.omega,
    ]
}

/// A trolley rigidly held by the detector's manipulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub trolley: usize,
    /// Trolley pose in the detector frame.
    pub offset: Pose2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub detector_pose: Pose2,
    pub collector_pose: Pose2,
    pub trolley_poses: Vec<Pose2>,
    pub attached: Option<Attachment>,
    pub queue_count: usize,
    pub time: f64,
}

impl WorldState {
    pub fn new(detector_pose: Pose2, collector_pose: Pose2, trolley_poses: Vec<Pose2>) -> Self {
        WorldState {
            detector_pose,
            collector_pose,
            trolley_poses,
            attached: None,
            queue_count: 0,
            time: 0.0,
        }
    }

    /// Locks trolley `index` to the detector at `offset` and snaps it there.
    pub fn attach(&mut self, index: usize, offset: Pose2) {
        self.attached = Some(Attachment { trolley: index, offset });
        self.trolley_poses[index] = compose(&self.detector_pose, &offset);
    }

    pub fn release(&mut self) -> Option<usize> {
        self.attached.take().map(|a| a.trolley)
    }
}

/// Advances the detector by one exact-arc step and carries the attached
/// trolley along. Everything else stays put.
pub fn step_world(world: &WorldState, u: &ControlInput, dt: f64) -> Result<WorldState, VehicleError> {
    let mut next = world.clone();
    next.detector_pose = step_unicycle(&world.detector_pose, u, dt)?;
    if let Some(att) = world.attached {
        next.trolley_poses[att.trolley] = compose(&next.detector_pose, &att.offset);
    }
    next.time = world.time + dt;
    Ok(next)
}
