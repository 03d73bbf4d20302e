use serde::{Deserialize, Serialize};

use super::quintic::{solve_quintic, BoundaryState, QuinticTrajectory, VirtualTarget};
use super::PlannerError;
use crate::geometry::{wrap, Pose2};
use crate::vehicle::InputLimits;

/// Fraction of the stage caps the *average* speed may use when picking `t_p`.
pub const AVERAGE_SPEED_FRACTION: f64 = 0.7;
/// Fraction of the stage caps the *peak* nominal speed and yaw rate may use.
pub const PEAK_FRACTION: f64 = 0.9;
/// Shortest trajectory duration.
pub const MIN_DURATION: f64 = 2.0;
const MIN_TURN_DURATION: f64 = 1.0;
const SAMPLES: usize = 100;
const STRETCH_SAMPLES: usize = 1000;

/// `t_p = max(d / (0.7 v_max), |dtheta| / (0.7 omega_max), 2 s)`.
pub fn choose_duration(start: &Pose2, goal: &Pose2, limits: &InputLimits) -> f64 {
    let d = start.distance(goal);
    let dth = wrap(goal.theta - start.theta).abs();
    (d / (AVERAGE_SPEED_FRACTION * limits.v_max))
        .max(dth / (AVERAGE_SPEED_FRACTION * limits.omega_max))
        .max(MIN_DURATION)
}

fn min_jerk(tau: f64) -> (f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let s = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    (s, ds)
}

/// Rotation on the spot with a minimum-jerk heading profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnInPlace {
    pub position: [f64; 2],
    pub from: f64,
    /// Signed rotation, not wrapped.
    pub delta: f64,
    pub duration: f64,
}

impl TurnInPlace {
    pub fn new(position: [f64; 2], from: f64, to: f64, limits: &InputLimits) -> Self {
        let delta = wrap(to - from);
        // peak yaw rate of the profile is 1.875 |delta| / T
        let duration = (1.875 * delta.abs() / (PEAK_FRACTION * limits.omega_max)).max(MIN_TURN_DURATION);
        TurnInPlace {
            position,
            from,
            delta,
            duration,
        }
    }

    pub fn sample(&self, t: f64) -> VirtualTarget {
        let (s, ds) = min_jerk(t / self.duration);
        let omega = if t >= self.duration || t <= 0.0 {
            0.0
        } else {
            self.delta * ds / self.duration
        };
        VirtualTarget {
            pose: Pose2::new(self.position[0], self.position[1], self.from + self.delta * s),
            v: 0.0,
            omega,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    Turn(TurnInPlace),
    Quintic(QuinticTrajectory),
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match self {
            Segment::Turn(t) => t.duration,
            Segment::Quintic(q) => q.t_p,
        }
    }

    pub fn sample(&self, t: f64) -> VirtualTarget {
        match self {
            Segment::Turn(s) => s.sample(t),
            Segment::Quintic(q) => q.sample(t),
        }
    }
}

/// Concatenation of turns and quintic pieces. After the last segment the
/// virtual target rests at the final pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    segments: Vec<Segment>,
    starts: Vec<f64>,
    duration: f64,
}

impl ReferencePath {
    pub fn new(segments: Vec<Segment>) -> Self {
        let mut starts = Vec::with_capacity(segments.len());
        let mut t = 0.0;
        for s in &segments {
            starts.push(t);
            t += s.duration();
        }
        ReferencePath {
            segments,
            starts,
            duration: t,
        }
    }

    /// A path that holds `pose` forever.
    pub fn hold(pose: Pose2) -> Self {
        ReferencePath::new(vec![Segment::Turn(TurnInPlace {
            position: [pose.x, pose.y],
            from: pose.theta,
            delta: 0.0,
            duration: MIN_TURN_DURATION,
        })])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn sample(&self, t: f64) -> VirtualTarget {
        let idx = match self.starts.iter().rposition(|&s| s <= t) {
            Some(i) => i,
            None => 0,
        };
        let seg = &self.segments[idx];
        let local = t - self.starts[idx];
        if idx + 1 == self.segments.len() || local < seg.duration() {
            seg.sample(local)
        } else {
            // exactly on a boundary with a later segment present
            self.segments[idx + 1].sample(0.0)
        }
    }

    pub fn goal_pose(&self) -> Pose2 {
        self.sample(self.duration + 1.0).pose
    }

    pub fn start_pose(&self) -> Pose2 {
        self.sample(0.0).pose
    }
}

/// Keep-in-view requirement for a point while following a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewConstraint {
    pub point: [f64; 2],
    pub half_angle: f64,
    /// Required clearance from the view edge along the nominal path.
    pub margin: f64,
}

impl ViewConstraint {
    fn bearing_from(&self, pose: &Pose2) -> f64 {
        let p = pose.inverse_transform_point(self.point);
        p[1].atan2(p[0])
    }
}

/// Stretches `t_p` so the peak nominal speed, yaw rate and acceleration of a
/// unit-time quintic stay inside `PEAK_FRACTION` of the caps.
fn stretch_duration(unit: &QuinticTrajectory, floor: f64, limits: &InputLimits) -> f64 {
    let mut peak_v: f64 = 0.0;
    let mut peak_acc: f64 = 0.0;
    let mut samples = Vec::with_capacity(STRETCH_SAMPLES + 1);
    for i in 0..=STRETCH_SAMPLES {
        let tau = i as f64 / STRETCH_SAMPLES as f64;
        let (x, y) = unit.eval(tau);
        let speed = x[1].hypot(y[1]);
        peak_v = peak_v.max(speed);
        peak_acc = peak_acc.max(x[2].hypot(y[2]));
        samples.push((x, y, speed));
    }
    let mut peak_w: f64 = 0.0;
    for (x, y, speed) in &samples {
        // the yaw-rate spike at rest has negligible spatial extent
        if *speed > 0.05 * peak_v {
            peak_w = peak_w.max(((x[1] * y[2] - y[1] * x[2]) / (speed * speed)).abs());
        }
    }
    floor
        .max(peak_v / (PEAK_FRACTION * limits.v_max))
        .max(peak_w / (PEAK_FRACTION * limits.omega_max))
        .max((peak_acc / (PEAK_FRACTION * limits.a_max)).sqrt())
}

fn rest_boundary(pose: &Pose2, acc: f64) -> BoundaryState {
    let h = pose.heading();
    BoundaryState {
        pos: [pose.x, pose.y],
        vel: [0.0, 0.0],
        acc: [acc * h[0], acc * h[1]],
    }
}

/// Rest-to-rest quintic from `start` to `goal` whose limiting tangents at both
/// ends follow the pose headings, scaled in time to respect `limits`.
pub fn heading_quintic(
    start: &Pose2,
    goal: &Pose2,
    start_gain: f64,
    goal_gain: f64,
    limits: &InputLimits,
) -> Result<QuinticTrajectory, PlannerError> {
    let d = start.distance(goal);
    let unit = solve_quintic(&rest_boundary(start, start_gain * d), &rest_boundary(goal, -goal_gain * d), 1.0)?;
    let t_p = stretch_duration(&unit, choose_duration(start, goal, limits), limits);
    // geometry is invariant when accelerations scale with 1 / t_p^2
    let s = 1.0 / (t_p * t_p);
    Ok(
        solve_quintic(&rest_boundary(start, start_gain * d * s), &rest_boundary(goal, -goal_gain * d * s), t_p)?
            .with_headings(start.theta, goal.theta),
    )
}

#[derive(Debug, Clone)]
struct Candidate {
    path: ReferencePath,
    margin: f64,
    cost: f64,
}

const HEADING_OFFSETS_DEG: [f64; 19] = [
    0.0, 10.0, -10.0, 20.0, -20.0, 30.0, -30.0, 40.0, -40.0, 50.0, -50.0, 60.0, -60.0, 70.0, -70.0, 80.0, -80.0, 90.0,
    -90.0,
];
const START_GAINS: [f64; 3] = [1.0, 3.0, 6.0];
const GOAL_GAINS: [f64; 3] = [2.0, 4.0, 8.0];
/// Largest allowed jump between the commanded start heading and the path
/// direction just after departure.
const MAX_DEPARTURE_SWING: f64 = 0.35;

fn evaluate(
    start: &Pose2,
    goal: &Pose2,
    offset: f64,
    start_gain: f64,
    goal_gain: f64,
    view: Option<&ViewConstraint>,
    limits: &InputLimits,
) -> Result<Option<Candidate>, PlannerError> {
    let depart = Pose2::new(start.x, start.y, start.theta + offset);
    let q = heading_quintic(&depart, goal, start_gain, goal_gain, limits)?;
    let mut margin = f64::INFINITY;
    let mut prev_heading = depart.theta;
    for i in 1..=SAMPLES {
        let t = q.t_p * i as f64 / SAMPLES as f64;
        let vt = q.sample(t);
        if i <= 3 && wrap(vt.pose.theta - depart.theta).abs() > MAX_DEPARTURE_SWING {
            return Ok(None);
        }
        // reject cusps: heading should evolve smoothly along the samples
        if wrap(vt.pose.theta - prev_heading).abs() > 0.5 {
            return Ok(None);
        }
        prev_heading = vt.pose.theta;
        if let Some(view) = view {
            margin = margin.min(view.half_angle - view.bearing_from(&vt.pose).abs());
        }
    }
    let mut segments = Vec::new();
    let mut cost = q.t_p;
    if offset.abs() > 1e-9 {
        let turn = TurnInPlace::new([start.x, start.y], start.theta, depart.theta, limits);
        if let Some(view) = view {
            let b0 = view.bearing_from(start).abs();
            let b1 = view.bearing_from(&depart).abs();
            if b1 > b0.max(view.half_angle - view.margin) {
                return Ok(None);
            }
        }
        cost += turn.duration;
        segments.push(Segment::Turn(turn));
    }
    segments.push(Segment::Quintic(q));
    Ok(Some(Candidate {
        path: ReferencePath::new(segments),
        margin,
        cost,
    }))
}

/// Plans a reference from `start` to `goal`. A short on-the-spot turn may
/// precede the quintic; the departure heading and end-point tangent gains are
/// searched so that `view.point` stays inside the view cone with the requested
/// margin. When no candidate meets the margin the one with the widest margin is
/// returned; when no smooth candidate exists at all the path is turn, straight
/// drive, turn.
pub fn plan_approach(
    start: &Pose2,
    goal: &Pose2,
    view: Option<&ViewConstraint>,
    limits: &InputLimits,
) -> Result<ReferencePath, PlannerError> {
    if !start.is_finite() || !goal.is_finite() {
        return Err(PlannerError::NonFinite);
    }
    if start.distance(goal) < 1e-3 {
        return Ok(ReferencePath::new(vec![Segment::Turn(TurnInPlace::new(
            [goal.x, goal.y],
            start.theta,
            goal.theta,
            limits,
        ))]));
    }
    let mut best_feasible: Option<Candidate> = None;
    let mut best_margin: Option<Candidate> = None;
    for off in HEADING_OFFSETS_DEG {
        for kg in GOAL_GAINS {
            for ks in START_GAINS {
                let Some(c) = evaluate(start, goal, off.to_radians(), ks, kg, view, limits)? else {
                    continue;
                };
                let ok = view.map_or(true, |v| c.margin >= v.margin);
                if ok && best_feasible.as_ref().map_or(true, |b| c.cost < b.cost - 1e-9) {
                    best_feasible = Some(c.clone());
                }
                if best_margin.as_ref().map_or(true, |b| c.margin > b.margin + 1e-12) {
                    best_margin = Some(c);
                }
            }
        }
    }
    match best_feasible.or(best_margin) {
        Some(c) => Ok(c.path),
        // every smooth candidate needs a cusp: turn, drive straight, turn
        None => plan_waypoint_path(start, &[[goal.x, goal.y]], Some(goal.theta), limits),
    }
}

/// Straight backwards move of `distance` keeping the heading of `start`.
pub fn plan_reverse(start: &Pose2, distance: f64, limits: &InputLimits) -> Result<ReferencePath, PlannerError> {
    if !start.is_finite() || !(distance > 0.0) {
        return Err(PlannerError::NonFinite);
    }
    let h = start.heading();
    let goal = Pose2::new(start.x - distance * h[0], start.y - distance * h[1], start.theta);
    let mut q = heading_quintic(start, &goal, 0.0, 0.0, limits)?;
    q.reverse = true;
    Ok(ReferencePath::new(vec![Segment::Quintic(q)]))
}

/// Turn-then-drive reference through `waypoints`, optionally finishing with a
/// turn to `goal_heading`.
pub fn plan_waypoint_path(
    start: &Pose2,
    waypoints: &[[f64; 2]],
    goal_heading: Option<f64>,
    limits: &InputLimits,
) -> Result<ReferencePath, PlannerError> {
    let mut segments = Vec::new();
    let mut pose = *start;
    for wp in waypoints {
        let dx = wp[0] - pose.x;
        let dy = wp[1] - pose.y;
        if dx.hypot(dy) < 1e-3 {
            continue;
        }
        let dir = dy.atan2(dx);
        if wrap(dir - pose.theta).abs() > 1e-3 {
            segments.push(Segment::Turn(TurnInPlace::new([pose.x, pose.y], pose.theta, dir, limits)));
        }
        let from = Pose2::new(pose.x, pose.y, dir);
        let to = Pose2::new(wp[0], wp[1], dir);
        segments.push(Segment::Quintic(heading_quintic(&from, &to, 0.0, 0.0, limits)?));
        pose = to;
    }
    if let Some(h) = goal_heading {
        if wrap(h - pose.theta).abs() > 1e-3 {
            segments.push(Segment::Turn(TurnInPlace::new([pose.x, pose.y], pose.theta, h, limits)));
        }
    }
    if segments.is_empty() {
        return Ok(ReferencePath::hold(pose));
    }
    Ok(ReferencePath::new(segments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn approach_limits() -> InputLimits {
        InputLimits::new(0.22, 0.4, 0.5, 1.5)
    }

    #[test]
    fn reverse_segment_backs_up() {
        let lim = approach_limits();
        let start = Pose2::new(1.0, 2.0, 0.7);
        let path = plan_reverse(&start, 0.6, &lim).unwrap();
        let end = path.goal_pose();
        assert!((end.distance(&start) - 0.6).abs() < 1e-9);
        assert!(wrap(end.theta - start.theta).abs() < 1e-12);
        let mid = path.sample(0.5 * path.duration());
        assert!(mid.v < 0.0 && mid.omega.abs() < 1e-9);
        assert!(wrap(mid.pose.theta - start.theta).abs() < 1e-9);
        assert!(mid.v.abs() <= PEAK_FRACTION * lim.v_max + 1e-9);
    }

    #[test]
    fn duration_rule_examples() {
        let lim = approach_limits();
        let p = Pose2::new(1.0, 1.0, 0.3);
        assert_eq!(choose_duration(&p, &p, &lim), 2.0);
        let t = choose_duration(&Pose2::IDENTITY, &Pose2::new(2.0, 0.0, 0.0), &lim);
        assert!((t - 2.0 / (0.7 * 0.22)).abs() < 1e-12);
        assert!((t - 12.99).abs() < 0.01);
        let t = choose_duration(&Pose2::IDENTITY, &Pose2::new(0.0, 0.0, PI), &lim);
        assert!((t - 11.22).abs() < 0.01);
    }

    #[test]
    fn turn_profile_hits_endpoints() {
        let lim = approach_limits();
        let turn = TurnInPlace::new([1.0, 2.0], 0.2, -1.0, &lim);
        assert!((turn.sample(0.0).pose.theta - 0.2).abs() < 1e-12);
        assert!((turn.sample(turn.duration).pose.theta + 1.0).abs() < 1e-12);
        let peak = (0..=1000)
            .map(|i| turn.sample(turn.duration * i as f64 / 1000.0).omega.abs())
            .fold(0.0, f64::max);
        assert!(peak <= PEAK_FRACTION * lim.omega_max + 1e-9);
    }

    #[test]
    fn heading_quintic_departs_and_arrives_along_headings() {
        let lim = approach_limits();
        let start = Pose2::new(-1.5, 0.8, -0.4);
        let goal = Pose2::new(-0.45, 0.0, 0.0);
        let q = heading_quintic(&start, &goal, 3.0, 4.0, &lim).unwrap();
        let early = q.sample(1e-3 * q.t_p);
        let late = q.sample(q.t_p * (1.0 - 1e-3));
        assert!(wrap(early.pose.theta - start.theta).abs() < 0.05);
        assert!(wrap(late.pose.theta - goal.theta).abs() < 0.05);
        for i in 0..=1000 {
            let vt = q.sample(q.t_p * i as f64 / 1000.0);
            assert!(vt.v <= PEAK_FRACTION * lim.v_max + 1e-9);
        }
    }

    #[test]
    fn approach_keeps_point_in_view() {
        let lim = approach_limits();
        let view = ViewConstraint {
            point: [0.0, 0.0],
            half_angle: 35f64.to_radians(),
            margin: 5f64.to_radians(),
        };
        let goal = Pose2::new(-0.45, 0.0, 0.0);
        for (x, y) in [(-2.0, 0.8), (-1.6, -1.0), (-2.4, 0.2), (-1.5, 1.0)] {
            let bearing = (-y as f64).atan2(-x as f64);
            let start = Pose2::new(x, y, bearing + 0.3);
            let path = plan_approach(&start, &goal, Some(&view), &lim).unwrap();
            let end = path.goal_pose();
            assert!(end.distance(&goal) < 1e-9 && wrap(end.theta).abs() < 1e-9);
            for i in 0..=400 {
                let vt = path.sample(path.duration() * i as f64 / 400.0);
                let b = view.bearing_from(&vt.pose).abs();
                assert!(b < view.half_angle, "start {start:?} bearing {b}");
            }
        }
    }

    #[test]
    fn waypoint_path_visits_each_waypoint() {
        let lim = InputLimits::new(0.55, 0.7, 0.5, 1.5);
        let wps = [[1.0, 0.0], [1.0, 2.0], [3.0, 2.0]];
        let path = plan_waypoint_path(&Pose2::IDENTITY, &wps, Some(PI / 2.0), &lim).unwrap();
        let end = path.goal_pose();
        assert!((end.x - 3.0).abs() < 1e-12 && (end.y - 2.0).abs() < 1e-12);
        assert!((end.theta - PI / 2.0).abs() < 1e-12);
        let mut t = 0.0;
        while t < path.duration() {
            let vt = path.sample(t);
            assert!(vt.v <= PEAK_FRACTION * lim.v_max + 1e-9);
            assert!(vt.omega.abs() <= PEAK_FRACTION * lim.omega_max + 1e-9);
            t += 0.01;
        }
    }
}
