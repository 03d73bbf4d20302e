use rand::Rng;

use super::config::{ControllerChoice, ScenarioConfig};
use super::tracker::Tracker;
use super::{HarnessError, RunResult, StepLog};
use crate::geometry::{compose, relative, wrap, Pose2};
use crate::mission::{check_grasp, Stage};
use crate::perception::coarse_estimate;
use crate::planner::{plan_approach, plan_reverse, PlannerError, ReferencePath, ViewConstraint};
use crate::util::stream_rng;
use crate::vehicle::{step_unicycle, ControlInput, InputLimits};

const SETTLED_V: f64 = 0.005;
const SETTLED_OMEGA: f64 = 0.01;

/// Whether a trolley at the origin is inside the view cone of `robot`.
pub fn trolley_visible(robot: &Pose2, fov: f64) -> bool {
    let p = robot.inverse_transform_point([0.0, 0.0]);
    p[0] > 0.0 && p[1].atan2(p[0]).abs() < fov
}

/// Uniform start poses in the sampling region, heading within the spread of
/// facing the trolley; poses without the trolley in view are redrawn.
pub fn sample_initial_poses(config: &ScenarioConfig, count: usize, seed: u64) -> Vec<Pose2> {
    let mut rng = stream_rng(seed, 0);
    let region = &config.sampling;
    let spread = region.heading_spread_deg.to_radians();
    let fov = config.controller_params.phi_fov();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = rng.random_range(region.forward[0]..=region.forward[1]);
        let y = rng.random_range(region.lateral[0]..=region.lateral[1]);
        let facing = (-y).atan2(-x);
        let off = if spread > 0.0 {
            rng.random_range(-spread..=spread)
        } else {
            0.0
        };
        let pose = Pose2::new(x, y, facing + off);
        if trolley_visible(&pose, fov) {
            out.push(pose);
        }
    }
    out
}

pub(crate) fn settled(u: &ControlInput) -> bool {
    u.v.abs() < SETTLED_V && u.omega.abs() < SETTLED_OMEGA
}

pub(crate) fn concat(first: &ReferencePath, second: &ReferencePath) -> ReferencePath {
    ReferencePath::new(first.segments().iter().chain(second.segments()).cloned().collect())
}

/// Back off along the current heading, then approach `goal` again.
pub(crate) fn retry_path(
    start: &Pose2,
    goal: &Pose2,
    backoff: f64,
    view: Option<&ViewConstraint>,
    limits: &InputLimits,
) -> Result<ReferencePath, PlannerError> {
    let rev = plan_reverse(start, backoff, limits)?;
    let again = plan_approach(&rev.goal_pose(), goal, view, limits)?;
    Ok(concat(&rev, &again))
}

/// Simulates the approach stage from `initial` (in the trolley frame, trolley
/// at the origin) until the grasp check passes, the retries run out, the
/// trolley leaves the view for too long, or the timeout expires.
pub fn run_approach_trial(
    config: &ScenarioConfig,
    choice: ControllerChoice,
    initial: &Pose2,
    seed: u64,
) -> Result<RunResult, HarnessError> {
    config.validate()?;
    match simulate_approach(config, choice, initial, seed) {
        Err(HarnessError::Planner(e)) => Ok(RunResult {
            controller: choice,
            initial_pose: *initial,
            seed,
            success: false,
            failure: Some(format!("planning failed: {e}")),
            e_x: None,
            e_y: None,
            e_theta: None,
            duration: 0.0,
            attempts: 0,
            replans: 0,
            steps: Vec::new(),
            stages: Vec::new(),
        }),
        other => other,
    }
}

fn simulate_approach(
    config: &ScenarioConfig,
    choice: ControllerChoice,
    initial: &Pose2,
    seed: u64,
) -> Result<RunResult, HarnessError> {
    let sim = &config.sim;
    let fov = config.controller_params.phi_fov();
    if !initial.is_finite() || !trolley_visible(initial, fov) {
        return Err(HarnessError::Precondition(format!(
            "trolley not in view from start pose ({:.3}, {:.3}, {:.1} deg)",
            initial.x,
            initial.y,
            initial.theta.to_degrees()
        )));
    }
    let mission = config.mission.mission_config(1);
    let limits = mission.stage_limits.approaching;
    let grasp_goal = config.mission.grasp_pose(&Pose2::IDENTITY);
    let view = ViewConstraint {
        point: [0.0, 0.0],
        half_angle: fov,
        margin: sim.view_margin_deg.to_radians(),
    };
    let (sigma_pos, sigma_yaw) = (sim.noise_pos, sim.noise_yaw_deg.to_radians());
    let mut rng = stream_rng(seed, 0);
    let mut observe = |robot: &Pose2| {
        let truth = robot.inverse();
        if sigma_pos > 0.0 || sigma_yaw > 0.0 {
            coarse_estimate(&truth, sigma_pos, sigma_yaw, &mut rng)
        } else {
            truth
        }
    };

    let dt = sim.dt;
    let cdt = sim.control_dt();
    let mut tracker = Tracker::new(choice, &config.controller_params)?;
    let mut robot = *initial;
    let mut est = compose(&robot, &observe(&robot));
    let mut plan_est = est;
    tracker.set_path(plan_approach(&relative(&est, &robot), &grasp_goal, Some(&view), &limits)?);

    let mut steps = Vec::new();
    let mut u = ControlInput::ZERO;
    let mut t = 0.0;
    let mut step = 0usize;
    let mut out_of_view = 0.0;
    let mut attempts = 0;
    let mut replans = 0;
    let mut failure = None;
    let mut errors = None;
    loop {
        if step % sim.control_every == 0 {
            let obs = observe(&robot);
            est = compose(&robot, &obs);
            let robot_t = relative(&est, &robot);
            let jump = est.distance(&plan_est) > sim.replan_jump_m
                || wrap(est.theta - plan_est.theta).abs() > sim.replan_jump_deg.to_radians();
            let lost = robot_t.distance(&tracker.reference()) > sim.replan_tracking_m;
            if jump || lost {
                plan_est = est;
                tracker.set_path(plan_approach(&robot_t, &grasp_goal, Some(&view), &limits)?);
                replans += 1;
            }
            let arrived = tracker.finished()
                && (settled(&tracker.prev) || tracker.tau >= tracker.path.duration() + sim.settle_timeout_s);
            if arrived {
                attempts += 1;
                let rel = relative(&robot, &grasp_goal);
                if check_grasp(&rel, &mission) {
                    let out = tracker.bypass(ControlInput::ZERO, &robot_t);
                    steps.push(log_row(t, &robot, out, tracker.plan_id));
                    errors = Some([rel.x * 1e3, rel.y * 1e3, rel.theta.to_degrees()]);
                    break;
                }
                if attempts > sim.max_retries {
                    failure = Some("grasp retries exhausted".to_string());
                    break;
                }
                plan_est = est;
                tracker.set_path(retry_path(&robot_t, &grasp_goal, sim.backoff_m, Some(&view), &limits)?);
            }
            let out = tracker.step(&robot_t, Some(obs.translation()), &limits, cdt)?;
            u = out.u;
            steps.push(log_row(t, &robot, out, tracker.plan_id));
        }
        robot = step_unicycle(&robot, &u, dt)?;
        step += 1;
        t = step as f64 * dt;
        if trolley_visible(&robot, fov) {
            out_of_view = 0.0;
        } else {
            out_of_view += dt;
            if out_of_view > sim.fov_loss_s {
                failure = Some("trolley out of view".to_string());
                break;
            }
        }
        if t > sim.approach_timeout_s {
            failure = Some("timeout".to_string());
            break;
        }
    }
    Ok(RunResult {
        controller: choice,
        initial_pose: *initial,
        seed,
        success: errors.is_some(),
        failure,
        e_x: errors.map(|e| e[0]),
        e_y: errors.map(|e| e[1]),
        e_theta: errors.map(|e| e[2]),
        duration: t,
        attempts,
        replans,
        steps,
        stages: Vec::new(),
    })
}

pub(crate) fn log_row(t: f64, robot: &Pose2, out: super::tracker::TrackOutput, plan: u32) -> StepLog {
    log_row_stage(t, robot, out, plan, Stage::Approaching)
}

pub(crate) fn log_row_stage(t: f64, robot: &Pose2, out: super::tracker::TrackOutput, plan: u32, stage: Stage) -> StepLog {
    StepLog {
        t,
        pose: *robot,
        v: out.u.v,
        omega: out.u.omega,
        v_lyap: out.v_lyap,
        h: out.h,
        phi: out.phi,
        delta: out.delta,
        stage,
        status: out.status,
        plan,
    }
}
