//! Scenario configuration, approach trials, the full mission, batch
//! statistics and log output.

mod approach;
mod config;
mod run_mission;
mod tracker;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use approach::{run_approach_trial, sample_initial_poses, trolley_visible};
pub use config::{
    CapSpec, ControllerChoice, ControllerParams, MapConfig, MissionParams, PerceptionParams, PoseSpec, RectSpec,
    SamplingRegion, ScenarioConfig, SimConfig,
};
pub use run_mission::{run_full_mission, MissionReport, QueueReport};

use crate::controller::{ControllerError, QpStatus};
use crate::geometry::Pose2;
use crate::mission::{MissionError, Stage, StageEvent};
use crate::planner::PlannerError;
use crate::util::{fmt_g9, stream_rng};
use crate::vehicle::VehicleError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no results to summarize")]
    Empty,
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Mission(#[from] MissionError),
}

/// One control step of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub pose: Pose2,
    pub v: f64,
    pub omega: f64,
    pub v_lyap: f64,
    pub h: f64,
    pub phi: f64,
    pub delta: f64,
    pub stage: Stage,
    pub status: Option<QpStatus>,
    /// Changes whenever the reference path is replaced.
    pub plan: u32,
}

pub const CSV_HEADER: &str = "t,x,y,theta,v,omega,V,h,phi,delta,stage";

pub fn steps_to_csv(steps: &[StepLog]) -> String {
    let mut out = String::with_capacity(96 * (steps.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in steps {
        let fields = [s.t, s.pose.x, s.pose.y, s.pose.theta, s.v, s.omega, s.v_lyap, s.h, s.phi, s.delta];
        for f in fields {
            out.push_str(&fmt_g9(f));
            out.push(',');
        }
        let _ = writeln!(out, "{}", s.stage);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub controller: ControllerChoice,
    pub initial_pose: Pose2,
    pub seed: u64,
    pub success: bool,
    pub failure: Option<String>,
    /// Grasp goal in the robot frame at the successful check, in mm.
    pub e_x: Option<f64>,
    pub e_y: Option<f64>,
    /// Degrees.
    pub e_theta: Option<f64>,
    pub duration: f64,
    pub attempts: usize,
    pub replans: usize,
    #[serde(skip)]
    pub steps: Vec<StepLog>,
    pub stages: Vec<StageEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub controller: ControllerChoice,
    pub success: usize,
    pub ex_mean: Option<f64>,
    pub ex_std: Option<f64>,
    pub ey_mean: Option<f64>,
    pub ey_std: Option<f64>,
    pub eth_mean: Option<f64>,
    pub eth_std: Option<f64>,
}

/// Mean and sample standard deviation of absolute values, rounded to nine
/// significant digits.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let round = |v: f64| fmt_g9(v).parse::<f64>().unwrap_or(v);
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let std = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v.abs() - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    (Some(round(mean)), std.map(round))
}

/// Per-controller statistics over successful runs, in the fixed controller
/// order.
pub fn summarize(results: &[RunResult]) -> Result<Vec<BatchSummary>, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::Empty);
    }
    let mut out = Vec::new();
    for choice in ControllerChoice::ALL {
        let ok: Vec<&RunResult> = results.iter().filter(|r| r.controller == choice && r.success).collect();
        if !results.iter().any(|r| r.controller == choice) {
            continue;
        }
        let collect = |f: fn(&RunResult) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
        let (ex_mean, ex_std) = mean_std(&collect(|r| r.e_x));
        let (ey_mean, ey_std) = mean_std(&collect(|r| r.e_y));
        let (eth_mean, eth_std) = mean_std(&collect(|r| r.e_theta));
        out.push(BatchSummary {
            controller: choice,
            success: ok.len(),
            ex_mean,
            ex_std,
            ey_mean,
            ey_std,
            eth_mean,
            eth_std,
        });
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes `<stem>.csv` with the step log and `<stem>.json` with the run
/// summary into `dir`.
pub fn emit_logs(result: &RunResult, dir: &Path, stem: &str) -> Result<(), HarnessError> {
    create_dir(dir)?;
    write_file(&dir.join(format!("{stem}.csv")), &steps_to_csv(&result.steps))?;
    let json = serde_json::to_string_pretty(result).expect("run result serializes");
    write_file(&dir.join(format!("{stem}.json")), &(json + "\n"))
}

pub fn write_summary(summary: &[BatchSummary], path: &Path) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    write_file(path, &(json + "\n"))
}

/// Everything a batch produced.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub initial_poses: Vec<Pose2>,
    pub results: Vec<RunResult>,
    pub summary: Vec<BatchSummary>,
}

/// Seed of trial `index` under `master`.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    use rand::RngCore;
    stream_rng(master, 1 + index as u64).next_u64()
}

/// Runs `runs` trials per controller from shared initial poses. Trials run in
/// parallel; results come back in (controller, index) order.
pub fn run_batch(
    config: &ScenarioConfig,
    controllers: &[ControllerChoice],
    runs: usize,
    seed: u64,
) -> Result<BatchOutcome, HarnessError> {
    config.validate()?;
    let poses = sample_initial_poses(config, runs, seed);
    let jobs: Vec<(ControllerChoice, usize)> = controllers
        .iter()
        .flat_map(|&c| (0..runs).map(move |i| (c, i)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(c, i)| run_approach_trial(config, c, &poses[i], trial_seed(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&results)?;
    Ok(BatchOutcome {
        initial_poses: poses,
        results,
        summary,
    })
}

/// Writes one CSV/JSON pair per run plus `summary.json`.
pub fn emit_batch(outcome: &BatchOutcome, dir: &Path) -> Result<(), HarnessError> {
    create_dir(dir)?;
    let mut counters = std::collections::HashMap::new();
    for r in &outcome.results {
        let k = counters.entry(r.controller).or_insert(0usize);
        emit_logs(r, dir, &format!("{}_{:03}", r.controller, *k))?;
        *k += 1;
    }
    write_summary(&outcome.summary, &dir.join("summary.json"))
}

/// Writes `mission.csv` with the step log and `mission.json` with the report.
pub fn emit_mission(report: &MissionReport, dir: &Path) -> Result<(), HarnessError> {
    create_dir(dir)?;
    write_file(&dir.join("mission.csv"), &steps_to_csv(&report.steps))?;
    let json = serde_json::to_string_pretty(report).expect("mission report serializes");
    write_file(&dir.join("mission.json"), &(json + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(controller: ControllerChoice, e: Option<[f64; 3]>) -> RunResult {
        RunResult {
            controller,
            initial_pose: Pose2::IDENTITY,
            seed: 0,
            success: e.is_some(),
            failure: None,
            e_x: e.map(|e| e[0]),
            e_y: e.map(|e| e[1]),
            e_theta: e.map(|e| e[2]),
            duration: 0.0,
            attempts: 1,
            replans: 0,
            steps: Vec::new(),
            stages: Vec::new(),
        }
    }

    #[test]
    fn summary_examples() {
        assert!(matches!(summarize(&[]), Err(HarnessError::Empty)));
        let fails = vec![result(ControllerChoice::Mpc, None); 3];
        let s = summarize(&fails).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].success, 0);
        assert_eq!(s[0].ex_mean, None);
        let two = vec![
            result(ControllerChoice::Clfcbf, Some([1.0, -2.0, 0.5])),
            result(ControllerChoice::Clfcbf, Some([3.0, 2.0, -0.5])),
            result(ControllerChoice::Clfcbf, None),
        ];
        let s = summarize(&two).unwrap();
        assert_eq!(s[0].success, 2);
        assert_eq!(s[0].ex_mean, Some(2.0));
        assert!((s[0].ex_std.unwrap() - 2f64.sqrt()).abs() < 1e-8);
        assert_eq!(s[0].ey_std, Some(0.0));
        let one = summarize(&two[..1]).unwrap();
        assert_eq!(one[0].ex_std, None);
    }

    #[test]
    fn csv_layout() {
        let step = StepLog {
            t: 0.05,
            pose: Pose2::new(1.0, -2.0, 0.5),
            v: 0.1,
            omega: 0.0,
            v_lyap: 1.0 / 3.0,
            h: f64::NAN,
            phi: f64::NAN,
            delta: 0.0,
            stage: Stage::Approaching,
            status: None,
            plan: 1,
        };
        let csv = steps_to_csv(&[step, step]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "0.05,1,-2,0.5,0.1,0,0.333333333,nan,nan,0,Approaching");
    }
}
