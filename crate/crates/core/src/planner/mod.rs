//! Reference trajectories for the tracking controller and grid search for
//! the navigation stage.

use thiserror::Error;

pub mod grid;
pub mod path;
pub mod quintic;

pub use grid::{plan_astar, GridPath, OccupancyGrid, PathCost};
pub use path::{
    choose_duration, heading_quintic, plan_approach, plan_reverse, plan_waypoint_path, ReferencePath, Segment, TurnInPlace,
    ViewConstraint,
};
pub use quintic::{solve_quintic, BoundaryState, QuinticTrajectory, VirtualTarget};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("trajectory duration must be positive and finite, got {0}")]
    BadDuration(f64),
    #[error("non-finite boundary state")]
    NonFinite,
    #[error("no admissible approach path")]
    NoPath,
    #[error("start cell is blocked")]
    StartBlocked,
    #[error("goal cell is blocked")]
    GoalBlocked,
    #[error("{0} lies outside the map")]
    OutOfBounds(&'static str),
    #[error("goal is unreachable")]
    Unreachable,
    #[error("map parse error: {0}")]
    MapParse(String),
}
