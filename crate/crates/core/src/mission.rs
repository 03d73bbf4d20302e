//! Collection state machine: stage triggers, success checks and queue
//! bookkeeping.

use std::f64::consts::PI;
use std::fmt;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{compose, Pose2};
use crate::vehicle::{InputLimits, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Searching,
    Navigation,
    Approaching,
    Docking,
    Done,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Searching => "Searching",
            Stage::Navigation => "Navigation",
            Stage::Approaching => "Approaching",
            Stage::Docking => "Docking",
            Stage::Done => "Done",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MissionError {
    #[error("invalid mission parameters: {0}")]
    BadConfig(String),
}

/// Speed caps for the moving stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLimits {
    pub navigation: InputLimits,
    pub approaching: InputLimits,
    pub docking: InputLimits,
}

impl StageLimits {
    pub fn for_stage(&self, stage: Stage) -> InputLimits {
        match stage {
            Stage::Approaching => self.approaching,
            Stage::Docking => self.docking,
            _ => self.navigation,
        }
    }
}

impl Default for StageLimits {
    fn default() -> Self {
        StageLimits {
            navigation: InputLimits::new(0.55, 0.7, 0.5, 1.5),
            approaching: InputLimits::new(0.22, 0.4, 0.5, 1.5),
            docking: InputLimits::new(0.35, 0.25, 0.5, 1.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    /// Queue spacing between consecutive docked trolleys.
    pub xi: f64,
    /// Approaching starts inside this distance to the estimated grasp pose.
    pub rho1: f64,
    /// Docking starts inside this distance to the current slot.
    pub rho2: f64,
    pub success_rho: f64,
    pub success_theta: f64,
    pub dock_lat_tol: f64,
    pub dock_yaw_tol: f64,
    pub trolley_count: usize,
    pub stage_limits: StageLimits,
    /// Distance from the collector face to the robot at the first slot.
    pub dock_standoff: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            xi: 0.18,
            rho1: 1.0,
            rho2: 2.1,
            success_rho: 0.03,
            success_theta: 5f64.to_radians(),
            dock_lat_tol: 0.08,
            dock_yaw_tol: 10f64.to_radians(),
            trolley_count: 4,
            stage_limits: StageLimits::default(),
            dock_standoff: 1.0,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), MissionError> {
        let positive = [
            self.xi,
            self.rho1,
            self.rho2,
            self.success_rho,
            self.success_theta,
            self.dock_lat_tol,
            self.dock_yaw_tol,
            self.dock_standoff,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(MissionError::BadConfig("distances and tolerances must be positive".into()));
        }
        if self.success_rho >= self.rho1 || self.dock_lat_tol >= self.rho2 {
            return Err(MissionError::BadConfig("tolerances must be smaller than triggers".into()));
        }
        for l in [
            self.stage_limits.navigation,
            self.stage_limits.approaching,
            self.stage_limits.docking,
        ] {
            l.validate().map_err(|e| MissionError::BadConfig(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub docked_count: usize,
    /// Collector pose; the queue grows out of its front face.
    pub head_pose: Pose2,
}

/// Robot pose for the next dock: facing the collector at the standoff, moved
/// back by one queue spacing per trolley already docked.
pub fn docking_goal(queue: &QueueState, config: &MissionConfig) -> Pose2 {
    let first = compose(&queue.head_pose, &Pose2::new(config.dock_standoff, 0.0, PI));
    compose(&first, &Pose2::new(-(queue.docked_count as f64) * config.xi, 0.0, 0.0))
}

pub fn check_grasp(relative: &Pose2, config: &MissionConfig) -> bool {
    relative.norm() < config.success_rho && relative.theta.abs() < config.success_theta
}

/// `relative_to_slot` is the robot pose in the slot frame.
pub fn check_dock(relative_to_slot: &Pose2, queue: &QueueState, config: &MissionConfig) -> bool {
    if queue.docked_count == 0 {
        check_grasp(relative_to_slot, config)
    } else {
        relative_to_slot.y.abs() < config.dock_lat_tol && relative_to_slot.theta.abs() < config.dock_yaw_tol
    }
}

/// In-process stand-in for the collector's pose broadcast.
pub fn query_collector(world: &WorldState, noise_sigma: f64, rng: &mut ChaCha8Rng) -> Pose2 {
    if noise_sigma <= 0.0 {
        return world.collector_pose;
    }
    let n = Normal::new(0.0, noise_sigma).expect("finite sigma");
    let c = world.collector_pose;
    Pose2::new(c.x + n.sample(rng), c.y + n.sample(rng), c.theta)
}

/// What the robot currently believes, as far as stage triggers care.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observations {
    pub trolley_detected: bool,
    /// Distance to the estimated grasp pose of the trolley being collected.
    pub grasp_distance: Option<f64>,
    /// Distance to the current docking slot.
    pub slot_distance: Option<f64>,
    pub grasp_succeeded: bool,
    pub dock_succeeded: bool,
}

/// Why a transition fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    Detected,
    TrolleyInRange,
    Grasped,
    SlotInRange,
    Docked,
    AllDocked,
}

impl Trigger {
    pub fn as_str(&self) -> &'static str {
        match self {
            Trigger::Detected => "detected",
            Trigger::TrolleyInRange => "trolley-in-range",
            Trigger::Grasped => "grasped",
            Trigger::SlotInRange => "slot-in-range",
            Trigger::Docked => "docked",
            Trigger::AllDocked => "all-docked",
        }
    }
}

/// Next stage for the snapshot. `world.queue_count` must already include a
/// dock reported in `obs`.
pub fn transition(stage: Stage, world: &WorldState, obs: &Observations, config: &MissionConfig) -> (Stage, Option<Trigger>) {
    let all_docked = world.queue_count >= config.trolley_count;
    match stage {
        Stage::Searching if all_docked => (Stage::Done, Some(Trigger::AllDocked)),
        Stage::Searching if obs.trolley_detected => (Stage::Navigation, Some(Trigger::Detected)),
        Stage::Navigation if world.attached.is_none() => match obs.grasp_distance {
            Some(d) if d < config.rho1 => (Stage::Approaching, Some(Trigger::TrolleyInRange)),
            _ => (stage, None),
        },
        Stage::Navigation => match obs.slot_distance {
            Some(d) if d < config.rho2 => (Stage::Docking, Some(Trigger::SlotInRange)),
            _ => (stage, None),
        },
        Stage::Approaching if obs.grasp_succeeded => (Stage::Navigation, Some(Trigger::Grasped)),
        Stage::Docking if obs.dock_succeeded && all_docked => (Stage::Done, Some(Trigger::AllDocked)),
        Stage::Docking if obs.dock_succeeded => (Stage::Searching, Some(Trigger::Docked)),
        _ => (stage, None),
    }
}

/// One stage change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub t: f64,
    pub from: Stage,
    pub to: Stage,
    pub trigger: Trigger,
}

/// Whether `stages` (including the initial one) spells
/// `(Searching Navigation Approaching Navigation Docking)^k Done`, or
/// `Searching Done` when there is nothing to collect.
pub fn matches_stage_language(stages: &[Stage], k: usize) -> bool {
    const CYCLE: [Stage; 5] = [
        Stage::Searching,
        Stage::Navigation,
        Stage::Approaching,
        Stage::Navigation,
        Stage::Docking,
    ];
    if k == 0 {
        return stages == [Stage::Searching, Stage::Done];
    }
    stages.len() == 5 * k + 1
        && stages.last() == Some(&Stage::Done)
        && stages[..5 * k].chunks(5).all(|c| c == CYCLE)
}
