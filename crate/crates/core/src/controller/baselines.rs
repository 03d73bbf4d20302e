//! Comparison controllers: a polar posture regulator and a sampled-input MPC.

use serde::{Deserialize, Serialize};

use crate::geometry::{relative, wrap, Pose2};
use crate::planner::ReferencePath;
use crate::vehicle::{clamp_input, integrate_arc, ControlInput, InputLimits};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearGains {
    pub k_rho: f64,
    pub k_alpha: f64,
    pub k_beta: f64,
}

impl Default for NonlinearGains {
    fn default() -> Self {
        NonlinearGains {
            k_rho: 0.4,
            k_alpha: 1.2,
            k_beta: 1.0,
        }
    }
}

/// Posture regulator driving the robot onto `goal`, given in the robot
/// frame. Output is clamped to the velocity box only.
pub fn baseline_nonlinear_step(goal: &Pose2, limits: &InputLimits, gains: &NonlinearGains) -> ControlInput {
    let rho = goal.norm();
    if rho < 1e-9 {
        return ControlInput::new(0.0, (gains.k_alpha * goal.theta).clamp(-limits.omega_max, limits.omega_max));
    }
    let alpha = goal.y.atan2(goal.x);
    let beta = wrap(alpha - goal.theta);
    // sin(a) cos(a) / a -> 1 as a -> 0
    let sinc = if alpha.abs() < 1e-9 {
        1.0
    } else {
        alpha.sin() * alpha.cos() / alpha
    };
    let v = gains.k_rho * rho * alpha.cos();
    let omega = gains.k_alpha * alpha + gains.k_rho * sinc * (alpha + gains.k_beta * beta);
    ControlInput::new(
        v.clamp(-limits.v_max, limits.v_max),
        omega.clamp(-limits.omega_max, limits.omega_max),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcParams {
    pub horizon: usize,
    pub grid: usize,
    /// Weights on the longitudinal, lateral and heading error.
    pub w: [f64; 3],
    pub r: [f64; 2],
}

impl Default for MpcParams {
    fn default() -> Self {
        MpcParams {
            horizon: 10,
            grid: 9,
            w: [10.0, 10.0, 2.0],
            r: [0.01, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutcome {
    pub u: ControlInput,
    pub cost: f64,
    /// Cost of every candidate in row-major `(v, omega)` order.
    pub costs: Vec<f64>,
}

/// Candidate inputs: a `grid x grid` lattice over the admissible window.
pub fn mpc_candidates(prev: ControlInput, limits: &InputLimits, dt: f64, grid: usize) -> Vec<ControlInput> {
    let (vlo, vhi) = limits.v_interval(prev.v, dt);
    let (wlo, whi) = limits.omega_interval(prev.omega, dt);
    let lerp = |lo: f64, hi: f64, i: usize| {
        if grid <= 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (grid - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            out.push(ControlInput::new(lerp(vlo, vhi, i), lerp(wlo, whi, j)));
        }
    }
    out
}

/// Predicted cost of holding `u` for the horizon from `robot`, both expressed
/// in the reference path's frame.
pub fn mpc_cost(robot: &Pose2, u: &ControlInput, path: &ReferencePath, t: f64, dt: f64, params: &MpcParams) -> f64 {
    let mut pose = *robot;
    let mut cost = 0.0;
    for k in 1..=params.horizon {
        pose = integrate_arc(&pose, u, dt);
        let e = relative(&pose, &path.sample(t + k as f64 * dt).pose);
        cost += params.w[0] * e.x * e.x + params.w[1] * e.y * e.y + params.w[2] * e.theta * e.theta;
        cost += params.r[0] * u.v * u.v + params.r[1] * u.omega * u.omega;
    }
    cost
}

/// Exhaustive search over the candidate lattice; ties go to the lowest index.
pub fn baseline_mpc_step(
    robot: &Pose2,
    path: &ReferencePath,
    t: f64,
    prev: ControlInput,
    limits: &InputLimits,
    dt: f64,
    params: &MpcParams,
) -> MpcOutcome {
    let candidates = mpc_candidates(prev, limits, dt, params.grid);
    let costs: Vec<f64> = candidates
        .iter()
        .map(|u| mpc_cost(robot, u, path, t, dt, params))
        .collect();
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    MpcOutcome {
        u: clamp_input(candidates[best], prev, limits, dt),
        cost: costs[best],
        costs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::compose;

    fn limits() -> InputLimits {
        InputLimits::new(0.22, 0.4, 0.5, 1.5)
    }

    #[test]
    fn nonlinear_examples() {
        let g = NonlinearGains::default();
        let u = baseline_nonlinear_step(&Pose2::IDENTITY, &limits(), &g);
        assert_eq!((u.v, u.omega), (0.0, 0.0));
        let u = baseline_nonlinear_step(&Pose2::new(1.0, 0.0, 0.0), &limits(), &g);
        assert!(u.v > 0.0 && u.omega == 0.0);
    }

    #[test]
    fn nonlinear_converges_from_offset_start() {
        let g = NonlinearGains::default();
        let lim = limits();
        let goal = Pose2::IDENTITY;
        let mut robot = Pose2::new(-2.0, -2.0, 0.0);
        let mut prev = ControlInput::ZERO;
        let mut t = 0.0;
        while t < 60.0 {
            let cmd = baseline_nonlinear_step(&relative(&robot, &goal), &lim, &g);
            let u = clamp_input(cmd, prev, &lim, 0.05);
            for _ in 0..5 {
                robot = integrate_arc(&robot, &u, 0.01);
            }
            prev = u;
            t += 0.05;
            if robot.norm() < 0.03 && robot.theta.abs() < 5f64.to_radians() {
                break;
            }
        }
        assert!(t < 60.0, "final {robot:?}");
    }

    #[test]
    fn mpc_picks_exhaustive_minimum() {
        let lim = limits();
        let path = ReferencePath::hold(Pose2::IDENTITY);
        let params = MpcParams::default();
        let out = baseline_mpc_step(&Pose2::IDENTITY, &path, 0.0, ControlInput::ZERO, &lim, 0.05, &params);
        assert_eq!(out.costs.len(), 81);
        assert_eq!((out.u.v, out.u.omega), (0.0, 0.0));
        assert!(out.costs.iter().all(|&c| out.cost <= c));
    }

    #[test]
    fn mpc_corrects_lateral_offset() {
        let lim = limits();
        let params = MpcParams::default();
        let goal = Pose2::new(1.0, 0.0, 0.0);
        let path = crate::planner::plan_approach(&Pose2::IDENTITY, &goal, None, &lim).unwrap();
        // robot displaced 0.1 m to the right of the path, moving forward
        let robot = compose(&Pose2::IDENTITY, &Pose2::new(0.0, -0.1, 0.0));
        let prev = ControlInput::new(0.1, 0.0);
        let out = baseline_mpc_step(&robot, &path, 1.0, prev, &lim, 0.05, &params);
        assert!(out.u.omega > 0.0);
        let left = Pose2::new(0.0, 0.1, 0.0);
        let out = baseline_mpc_step(&left, &path, 1.0, prev, &lim, 0.05, &params);
        assert!(out.u.omega < 0.0);
        assert!(out.costs.iter().all(|&c| out.cost <= c));
    }
}
