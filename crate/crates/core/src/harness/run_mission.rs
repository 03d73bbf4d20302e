use std::f64::consts::{FRAC_PI_4, PI};

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::approach::{log_row_stage, retry_path, settled};
use super::config::ScenarioConfig;
use super::tracker::{TrackOutput, Tracker};
use super::{HarnessError, StepLog};
use crate::geometry::{compose, relative, wrap, Pose2};
use crate::mission::{
    check_dock, check_grasp, docking_goal, query_collector, transition, MissionConfig, Observations, QueueState,
    Stage, StageEvent,
};
use crate::perception::{
    coarse_estimate, localize_collector, render_backboard_cloud, render_clutter, render_marker_cloud, sensor_to_robot,
    LabeledCloud,
};
use crate::planner::{plan_approach, plan_astar, plan_waypoint_path, OccupancyGrid, PlannerError, ReferencePath, ViewConstraint};
use crate::util::stream_rng;
use crate::vehicle::{clamp_input, step_world, ControlInput, WorldState};

/// Final arrangement of the docked trolleys.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueueReport {
    /// Docked trolley poses in docking order.
    pub trolley_poses: Vec<Pose2>,
    /// Distance between consecutive docked trolleys.
    pub spacings: Vec<f64>,
    /// Offset of each docked trolley from the collector's axis.
    pub lateral_offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub success: bool,
    pub final_stage: Stage,
    pub failure: Option<String>,
    pub docked_count: usize,
    pub duration: f64,
    pub grasp_attempts: usize,
    pub dock_attempts: usize,
    pub stages: Vec<StageEvent>,
    pub queue: QueueReport,
    #[serde(skip)]
    pub steps: Vec<StepLog>,
}

impl MissionReport {
    /// Initial stage followed by every stage entered.
    pub fn stage_sequence(&self) -> Vec<Stage> {
        std::iter::once(Stage::Searching)
            .chain(self.stages.iter().map(|e| e.to))
            .collect()
    }
}

const COLLECTOR_GATE_M: f64 = 0.3;
const COLLECTOR_GATE_DEG: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Search {
    Travel,
    Spin { turned: f64 },
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    mission: MissionConfig,
    grid: OccupancyGrid,
    fov: f64,
    world: WorldState,
    stage: Stage,
    tracker: Tracker,
    t: f64,
    search: Search,
    /// World-frame estimates.
    coarse: Pose2,
    fine: Pose2,
    collector: Pose2,
    collector_query: Pose2,
    plan_est: Pose2,
    attempts: usize,
    /// Coming to rest before the fine plan of the stage is made.
    braking: bool,
    grasp_attempts: usize,
    dock_attempts: usize,
    docked: Vec<usize>,
    rng_detect: ChaCha8Rng,
    rng_collector: ChaCha8Rng,
    rng_cloud: ChaCha8Rng,
}

enum Outcome {
    Continue(ControlInput, TrackOutput, Observations),
    Fail(String),
}

impl<'a> Runner<'a> {
    fn robot(&self) -> Pose2 {
        self.world.detector_pose
    }

    fn target(&self) -> usize {
        self.world.queue_count
    }

    fn queue(&self, head: Pose2) -> QueueState {
        QueueState {
            docked_count: self.world.queue_count,
            head_pose: head,
        }
    }

    fn view(&self, point: [f64; 2]) -> ViewConstraint {
        ViewConstraint {
            point,
            half_angle: self.fov,
            margin: self.cfg.sim.view_margin_deg.to_radians(),
        }
    }

    /// Static map plus every trolley not being carried.
    fn nav_grid(&self) -> OccupancyGrid {
        let mut grid = self.grid.clone();
        let carried = self.world.attached.map(|a| a.trolley);
        let rects: Vec<_> = self
            .world
            .trolley_poses
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != carried)
            .map(|(_, t)| self.cfg.mission.trolley_bounds(t))
            .collect();
        grid.fill_rects(&rects);
        grid
    }

    /// Grid path to `goal` turned into a turn-then-drive reference.
    fn plan_nav(&self, goal: &Pose2) -> Result<ReferencePath, HarnessError> {
        let grid = self.nav_grid();
        let start = self.robot();
        let mut lead = Vec::new();
        let from = if grid.blocked_at([start.x, start.y]) {
            let free = grid.nearest_free([start.x, start.y]).ok_or(PlannerError::StartBlocked)?;
            lead.push(free);
            Pose2::new(free[0], free[1], start.theta)
        } else {
            start
        };
        let path = plan_astar(&grid, &from, goal)?;
        let mut wps = lead;
        wps.extend(path.waypoints.iter().skip(1).copied());
        match wps.last_mut() {
            Some(last) if path.waypoints.len() > 1 => *last = [goal.x, goal.y],
            _ => wps.push([goal.x, goal.y]),
        }
        let limits = self.mission.stage_limits.navigation;
        Ok(plan_waypoint_path(&start, &wps, Some(goal.theta), &limits)?)
    }

    fn grasp_goal_world(&self, trolley: &Pose2) -> Pose2 {
        self.cfg.mission.grasp_pose(trolley)
    }

    fn pre_grasp(&self) -> Pose2 {
        compose(&self.grasp_goal_world(&self.coarse), &Pose2::new(-self.cfg.mission.pre_grasp_back, 0.0, 0.0))
    }

    fn slot(&self, head: Pose2) -> Pose2 {
        docking_goal(&self.queue(head), &self.mission)
    }

    fn pre_dock(&self) -> Pose2 {
        compose(&self.slot(self.collector), &Pose2::new(-self.cfg.mission.pre_dock_back, 0.0, 0.0))
    }

    fn enter(&mut self, stage: Stage) -> Result<(), HarnessError> {
        self.stage = stage;
        self.attempts = 0;
        match stage {
            Stage::Searching => {
                let k = self.target();
                match self.cfg.waypoints.get(k) {
                    Some(wp) => {
                        let r = self.robot();
                        let dir = (wp[1] - r.y).atan2(wp[0] - r.x);
                        let path = self.plan_nav(&Pose2::new(wp[0], wp[1], dir))?;
                        self.tracker.set_path(path);
                        self.search = Search::Travel;
                    }
                    None => {
                        self.tracker.set_path(ReferencePath::hold(self.robot()));
                        self.search = Search::Spin { turned: 0.0 };
                    }
                }
            }
            Stage::Navigation if self.world.attached.is_none() => {
                let path = self.plan_nav(&self.pre_grasp())?;
                self.tracker.set_path(path);
            }
            Stage::Navigation => {
                self.collector = query_collector(&self.world, self.cfg.perception.collector_noise, &mut self.rng_collector);
                self.collector_query = self.collector;
                let path = self.plan_nav(&self.pre_dock())?;
                self.tracker.set_path(path);
            }
            Stage::Approaching => {
                if let Some(est) = self.observe_trolley() {
                    self.fine = est;
                } else {
                    self.fine = self.coarse;
                }
                self.plan_est = self.fine;
                self.begin_fine_stage()?;
            }
            Stage::Docking => {
                if let Some(est) = self.observe_collector() {
                    self.collector = est;
                }
                self.plan_est = self.collector;
                self.begin_fine_stage()?;
            }
            Stage::Done => {
                self.tracker.set_path(ReferencePath::hold(self.robot()));
            }
        }
        Ok(())
    }

    fn grasp_goal_local(&self) -> Pose2 {
        self.cfg.mission.grasp_pose(&Pose2::IDENTITY)
    }

    fn slot_local(&self) -> Pose2 {
        self.slot(Pose2::IDENTITY)
    }

    /// Fine stages plan from rest; a robot still moving brakes first.
    fn begin_fine_stage(&mut self) -> Result<(), HarnessError> {
        self.braking = !settled(&self.tracker.prev);
        if self.braking {
            self.tracker.set_path(ReferencePath::hold(self.robot()));
            Ok(())
        } else {
            self.replan_fine()
        }
    }

    fn replan_fine(&mut self) -> Result<(), HarnessError> {
        match self.stage {
            Stage::Docking => self.replan_dock(),
            _ => self.replan_approach(),
        }
    }

    /// Decelerates in place of tracking; plans once at rest.
    fn brake(&mut self, robot: &Pose2) -> Result<Option<TrackOutput>, HarnessError> {
        if settled(&self.tracker.prev) {
            self.braking = false;
            self.replan_fine()?;
            return Ok(None);
        }
        let limits = self.mission.stage_limits.for_stage(self.stage);
        let u = clamp_input(ControlInput::ZERO, self.tracker.prev, &limits, self.cfg.sim.control_dt());
        Ok(Some(self.tracker.bypass(u, robot)))
    }

    fn replan_approach(&mut self) -> Result<(), HarnessError> {
        let start = relative(&self.fine, &self.robot());
        let view = self.view([0.0, 0.0]);
        let limits = self.mission.stage_limits.approaching;
        let path = plan_approach(&start, &self.grasp_goal_local(), Some(&view), &limits)?;
        self.tracker.set_path(path);
        Ok(())
    }

    fn replan_dock(&mut self) -> Result<(), HarnessError> {
        let start = relative(&self.collector, &self.robot());
        let limits = self.mission.stage_limits.docking;
        let path = plan_approach(&start, &self.slot_local(), None, &limits)?;
        self.tracker.set_path(path);
        Ok(())
    }

    /// Fine trolley pose in the world frame from a rendered backboard cloud.
    fn observe_trolley(&mut self) -> Option<Pose2> {
        let p = &self.cfg.perception;
        let truth = relative(&self.robot(), &self.world.trolley_poses[self.target()]);
        let seed = self.rng_cloud.next_u64();
        let mut cloud = render_backboard_cloud(&truth, &p.board, p.density, p.cloud_noise, self.fov, seed);
        let clutter = render_clutter(p.clutter, 0.6, seed);
        cloud.points.extend(clutter.points);
        cloud.intensity.extend(clutter.intensity);
        let est = p.board_pipeline(self.fov).run(&cloud, seed).ok()?;
        Some(compose(&self.robot(), &est.pose()))
    }

    /// Collector face pose in the world frame from the visible marker points.
    fn observe_collector(&mut self) -> Option<Pose2> {
        let p = &self.cfg.perception;
        let truth = relative(&self.robot(), &self.world.collector_pose);
        let seed = self.rng_cloud.next_u64();
        let cloud = render_marker_cloud(&truth, &p.markers, p.marker_points, p.marker_noise, p.clutter, seed);
        let fov = self.fov;
        let visible: LabeledCloud = cloud.select(|q, _| {
            let r = sensor_to_robot(q);
            r[0] > 0.0 && r[1].atan2(r[0]).abs() <= fov
        });
        let est = compose(&self.robot(), &localize_collector(&visible).ok()?);
        // partial or oblique views can flip the face normal
        let gate = &self.collector_query;
        (est.distance(gate) < COLLECTOR_GATE_M && wrap(est.theta - gate.theta).abs() < COLLECTOR_GATE_DEG.to_radians())
            .then_some(est)
    }

    fn estimate_jumped(&self, est: &Pose2) -> bool {
        est.distance(&self.plan_est) > self.cfg.sim.replan_jump_m
            || wrap(est.theta - self.plan_est.theta).abs() > self.cfg.sim.replan_jump_deg.to_radians()
    }

    fn trigger_range(&self) -> f64 {
        if self.world.attached.is_none() {
            self.mission.rho1
        } else {
            self.mission.rho2
        }
    }

    fn arrived(&self) -> bool {
        self.tracker.finished()
            && (settled(&self.tracker.prev)
                || self.tracker.tau >= self.tracker.path.duration() + self.cfg.sim.settle_timeout_s)
    }

    fn track(&mut self, robot_in_frame: &Pose2, view: Option<[f64; 2]>) -> Result<TrackOutput, HarnessError> {
        let limits = self.mission.stage_limits.for_stage(self.stage);
        self.tracker.step(robot_in_frame, view, &limits, self.cfg.sim.control_dt())
    }

    fn lost(&self, robot_in_frame: &Pose2) -> bool {
        robot_in_frame.distance(&self.tracker.reference()) > self.cfg.sim.replan_tracking_m
    }

    fn control(&mut self) -> Result<Outcome, HarnessError> {
        let robot = self.robot();
        let mut obs = Observations::default();
        let cdt = self.cfg.sim.control_dt();
        let out = match self.stage {
            Stage::Searching => {
                let k = self.target();
                if k < self.world.trolley_poses.len() {
                    let truth = self.world.trolley_poses[k];
                    let p = robot.inverse_transform_point([truth.x, truth.y]);
                    let range = p[0].hypot(p[1]);
                    if p[0] > 0.0 && p[1].atan2(p[0]).abs() < self.fov && range < self.cfg.perception.detection_range {
                        let pc = &self.cfg.perception;
                        self.coarse = coarse_estimate(
                            &truth,
                            pc.coarse_pos_sigma,
                            pc.coarse_yaw_sigma_deg.to_radians(),
                            &mut self.rng_detect,
                        );
                        obs.trolley_detected = true;
                    }
                }
                match self.search {
                    Search::Travel => {
                        if self.lost(&robot) {
                            let wp = self.tracker.path.goal_pose();
                            let path = self.plan_nav(&wp)?;
                            self.tracker.set_path(path);
                        }
                        if self.arrived() {
                            self.search = Search::Spin { turned: 0.0 };
                            self.tracker.set_path(ReferencePath::hold(robot));
                        }
                        self.track(&robot, None)?
                    }
                    Search::Spin { turned } => {
                        if turned > 4.0 * PI {
                            return Ok(Outcome::Fail(format!("trolley {k} not found")));
                        }
                        let limits = self.mission.stage_limits.navigation;
                        let u = clamp_input(ControlInput::new(0.0, self.cfg.mission.spin_rate), self.tracker.prev, &limits, cdt);
                        self.search = Search::Spin {
                            turned: turned + u.omega.abs() * cdt,
                        };
                        self.tracker.bypass(u, &robot)
                    }
                }
            }
            Stage::Navigation => {
                if self.lost(&robot) {
                    let goal = self.tracker.path.goal_pose();
                    let path = self.plan_nav(&goal)?;
                    self.tracker.set_path(path);
                }
                if self.world.attached.is_none() {
                    // only lined up behind the grasp pose with the trolley in view: the
                    // board fit cannot tell front from back and degrades edge-on
                    let grasp = self.grasp_goal_world(&self.coarse);
                    let p = robot.inverse_transform_point([self.coarse.x, self.coarse.y]);
                    let in_view = p[0] > 0.0 && p[1].atan2(p[0]).abs() < self.fov;
                    if lined_up(&grasp, &robot) && in_view {
                        obs.grasp_distance = Some(robot.distance(&grasp));
                    }
                } else {
                    let slot = self.slot(self.collector);
                    if lined_up(&slot, &robot) {
                        obs.slot_distance = Some(robot.distance(&slot));
                    }
                }
                if self.arrived() && obs.grasp_distance.or(obs.slot_distance).is_none_or(|d| d >= self.trigger_range()) {
                    self.attempts += 1;
                    if self.attempts > self.cfg.sim.max_retries {
                        return Ok(Outcome::Fail("navigation ended outside the trigger range".into()));
                    }
                    let goal = self.tracker.path.goal_pose();
                    let path = self.plan_nav(&goal)?;
                    self.tracker.set_path(path);
                }
                self.track(&robot, None)?
            }
            Stage::Approaching => {
                if let Some(est) = self.observe_trolley() {
                    self.fine = est;
                }
                let robot_t = relative(&self.fine, &robot);
                if self.braking {
                    if let Some(out) = self.brake(&robot_t)? {
                        return Ok(Outcome::Continue(out.u, out, obs));
                    }
                    self.plan_est = self.fine;
                }
                if self.estimate_jumped(&self.fine) || self.lost(&robot_t) {
                    self.plan_est = self.fine;
                    self.replan_approach()?;
                }
                if self.arrived() {
                    self.attempts += 1;
                    self.grasp_attempts += 1;
                    let k = self.target();
                    let rel = relative(&robot, &self.grasp_goal_world(&self.world.trolley_poses[k]));
                    if check_grasp(&rel, &self.mission) {
                        self.world.attach(k, Pose2::new(self.cfg.mission.grasp_offset, 0.0, 0.0));
                        obs.grasp_succeeded = true;
                        let out = self.tracker.bypass(ControlInput::ZERO, &robot_t);
                        return Ok(Outcome::Continue(ControlInput::ZERO, out, obs));
                    }
                    if self.attempts > self.cfg.sim.max_retries {
                        return Ok(Outcome::Fail("grasp retries exhausted".into()));
                    }
                    let view = self.view([0.0, 0.0]);
                    let limits = self.mission.stage_limits.approaching;
                    let path = retry_path(&robot_t, &self.grasp_goal_local(), self.cfg.sim.backoff_m, Some(&view), &limits)?;
                    self.plan_est = self.fine;
                    self.tracker.set_path(path);
                }
                let target = robot.inverse_transform_point([self.fine.x, self.fine.y]);
                self.track(&robot_t, Some(target))?
            }
            Stage::Docking => {
                if let Some(est) = self.observe_collector() {
                    self.collector = est;
                }
                let robot_c = relative(&self.collector, &robot);
                if self.braking {
                    if let Some(out) = self.brake(&robot_c)? {
                        return Ok(Outcome::Continue(out.u, out, obs));
                    }
                    self.plan_est = self.collector;
                }
                if self.estimate_jumped(&self.collector) || self.lost(&robot_c) {
                    self.plan_est = self.collector;
                    self.replan_dock()?;
                }
                if self.arrived() {
                    self.attempts += 1;
                    self.dock_attempts += 1;
                    let slot = self.slot(self.world.collector_pose);
                    let queue = self.queue(self.world.collector_pose);
                    if check_dock(&relative(&slot, &robot), &queue, &self.mission) {
                        if let Some(i) = self.world.release() {
                            self.docked.push(i);
                        }
                        self.world.queue_count += 1;
                        obs.dock_succeeded = true;
                        let out = self.tracker.bypass(ControlInput::ZERO, &robot_c);
                        return Ok(Outcome::Continue(ControlInput::ZERO, out, obs));
                    }
                    if self.attempts > self.cfg.sim.max_retries {
                        return Ok(Outcome::Fail("dock retries exhausted".into()));
                    }
                    let limits = self.mission.stage_limits.docking;
                    let path = retry_path(&robot_c, &self.slot_local(), self.cfg.sim.backoff_m, None, &limits)?;
                    self.plan_est = self.collector;
                    self.tracker.set_path(path);
                }
                self.track(&robot_c, None)?
            }
            Stage::Done => self.tracker.bypass(ControlInput::ZERO, &robot),
        };
        Ok(Outcome::Continue(out.u, out, obs))
    }
}

/// Whether `robot` lies in the 90 degree cone behind `goal` and faces within
/// 45 degrees of it.
fn lined_up(goal: &Pose2, robot: &Pose2) -> bool {
    let rel = relative(goal, robot);
    rel.x <= 0.0 && rel.y.abs() <= -rel.x && rel.theta.abs() <= FRAC_PI_4
}

/// Runs the collection state machine over every trolley of the scenario.
pub fn run_full_mission(config: &ScenarioConfig, seed: u64) -> Result<MissionReport, HarnessError> {
    config.validate()?;
    let trolleys: Vec<Pose2> = config.trolleys.iter().map(|p| p.pose()).collect();
    let mission = config.mission.mission_config(trolleys.len());
    let world = WorldState::new(config.robot_start.pose(), config.collector.pose(), trolleys);
    let mut run = Runner {
        cfg: config,
        mission,
        grid: config.build_grid()?,
        fov: config.controller_params.phi_fov(),
        collector: world.collector_pose,
        collector_query: world.collector_pose,
        world,
        stage: Stage::Searching,
        tracker: Tracker::new(config.controller, &config.controller_params)?,
        t: 0.0,
        search: Search::Travel,
        coarse: Pose2::IDENTITY,
        fine: Pose2::IDENTITY,
        plan_est: Pose2::IDENTITY,
        attempts: 0,
        braking: false,
        grasp_attempts: 0,
        dock_attempts: 0,
        docked: Vec::new(),
        rng_detect: stream_rng(seed, 10),
        rng_collector: stream_rng(seed, 11),
        rng_cloud: stream_rng(seed, 12),
    };
    let mut events = Vec::new();
    let mut steps = Vec::new();
    let mut failure = None;
    let sim = config.sim;
    let mut step = 0usize;
    let mut u = ControlInput::ZERO;

    let (first, trigger) = transition(Stage::Searching, &run.world, &Observations::default(), &run.mission);
    if let Some(trigger) = trigger {
        events.push(StageEvent {
            t: 0.0,
            from: Stage::Searching,
            to: first,
            trigger,
        });
    }
    if let Err(e) = run.enter(first) {
        failure = Some(e.to_string());
    }
    while failure.is_none() && run.stage != Stage::Done {
        if step % sim.control_every == 0 {
            let stage = run.stage;
            let outcome = match run.control() {
                Ok(o) => o,
                Err(e) => Outcome::Fail(e.to_string()),
            };
            match outcome {
                Outcome::Fail(reason) => {
                    failure = Some(reason);
                    break;
                }
                Outcome::Continue(cmd, out, obs) => {
                    u = cmd;
                    steps.push(log_row_stage(run.t, &run.robot(), out, run.tracker.plan_id, stage));
                    let (next, trigger) = transition(stage, &run.world, &obs, &run.mission);
                    if let (true, Some(trigger)) = (next != stage, trigger) {
                        events.push(StageEvent {
                            t: run.t,
                            from: stage,
                            to: next,
                            trigger,
                        });
                        if let Err(e) = run.enter(next) {
                            failure = Some(e.to_string());
                            break;
                        }
                    }
                }
            }
        }
        run.world = step_world(&run.world, &u, sim.dt)?;
        step += 1;
        run.t = step as f64 * sim.dt;
        if run.t > sim.mission_timeout_s {
            failure = Some("timeout".into());
        }
    }

    let collector = run.world.collector_pose;
    let poses: Vec<Pose2> = run.docked.iter().map(|&i| run.world.trolley_poses[i]).collect();
    let queue = QueueReport {
        spacings: poses.windows(2).map(|w| w[0].distance(&w[1])).collect(),
        lateral_offsets: poses.iter().map(|p| relative(&collector, p).y).collect(),
        trolley_poses: poses,
    };
    Ok(MissionReport {
        success: failure.is_none() && run.stage == Stage::Done,
        final_stage: run.stage,
        failure,
        docked_count: run.world.queue_count,
        duration: run.t,
        grasp_attempts: run.grasp_attempts,
        dock_attempts: run.dock_attempts,
        stages: events,
        queue,
        steps,
    })
}
