//! Simulation and control library for an autonomous trolley-collecting robot:
//! planar kinematics, quintic reference planning, a CLF-CBF quadratic-program
//! tracking controller with a field-of-view constraint, synthetic perception,
//! the collection state machine and a batch experiment harness.

pub mod geometry;
pub mod planner;
pub mod vehicle;
pub mod controller;
pub mod perception;
pub mod harness;
pub mod mission;
pub mod selftest;
pub mod util;
