//! Scenario documents: one JSON object with a block per module.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::controller::{CbfParams, ClfCbfConfig, ClfParams, CostReference, MpcParams, NonlinearGains};
use crate::geometry::Pose2;
use crate::mission::{MissionConfig, StageLimits};
use crate::perception::{BoardGeometry, BoardPipeline, MarkerLayout};
use crate::planner::OccupancyGrid;
use crate::vehicle::InputLimits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerChoice {
    #[default]
    Clfcbf,
    Mpc,
    Nonlinear,
}

impl ControllerChoice {
    pub const ALL: [ControllerChoice; 3] = [ControllerChoice::Clfcbf, ControllerChoice::Mpc, ControllerChoice::Nonlinear];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerChoice::Clfcbf => "clfcbf",
            ControllerChoice::Mpc => "mpc",
            ControllerChoice::Nonlinear => "nonlinear",
        }
    }
}

impl fmt::Display for ControllerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerChoice {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clfcbf" => Ok(ControllerChoice::Clfcbf),
            "mpc" => Ok(ControllerChoice::Mpc),
            "nonlinear" => Ok(ControllerChoice::Nonlinear),
            other => Err(HarnessError::Config(format!(
                "unknown controller {other:?} (expected clfcbf, mpc or nonlinear)"
            ))),
        }
    }
}

/// Pose with the heading in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta_deg: f64,
}

impl PoseSpec {
    pub fn pose(&self) -> Pose2 {
        Pose2::from_degrees(self.x, self.y, self.theta_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Text map; relative paths resolve against the scenario file.
    pub file: Option<PathBuf>,
    pub width_m: f64,
    pub height_m: f64,
    pub resolution: f64,
    pub inflation_radius: f64,
    pub obstacles: Vec<RectSpec>,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            file: None,
            width_m: 20.0,
            height_m: 15.0,
            resolution: 0.1,
            inflation_radius: 0.55,
            obstacles: Vec::new(),
        }
    }
}

/// Start poses for approach trials, in the trolley frame (`x` forward out of
/// the trolley's back, so the robot starts at negative `x`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingRegion {
    pub forward: [f64; 2],
    pub lateral: [f64; 2],
    /// Heading spread around facing the trolley.
    pub heading_spread_deg: f64,
}

impl Default for SamplingRegion {
    fn default() -> Self {
        SamplingRegion {
            forward: [-2.5, -1.5],
            lateral: [-1.0, 1.0],
            heading_spread_deg: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    /// Simulation steps per control step.
    pub control_every: usize,
    pub approach_timeout_s: f64,
    pub mission_timeout_s: f64,
    /// Approach trials fail once the trolley has been out of view this long.
    pub fov_loss_s: f64,
    /// Pose-level perception noise for approach trials.
    pub noise_pos: f64,
    pub noise_yaw_deg: f64,
    /// Hold-off after the nominal arrival before a grasp or dock is forced.
    pub settle_timeout_s: f64,
    pub max_retries: usize,
    pub backoff_m: f64,
    pub replan_jump_m: f64,
    pub replan_jump_deg: f64,
    pub replan_tracking_m: f64,
    pub view_margin_deg: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.01,
            control_every: 5,
            approach_timeout_s: 120.0,
            mission_timeout_s: 600.0,
            fov_loss_s: 1.0,
            noise_pos: 0.0,
            noise_yaw_deg: 0.0,
            settle_timeout_s: 5.0,
            max_retries: 3,
            backoff_m: 0.6,
            replan_jump_m: 0.15,
            replan_jump_deg: 10.0,
            replan_tracking_m: 0.5,
            view_margin_deg: 5.0,
        }
    }
}

impl SimConfig {
    pub fn control_dt(&self) -> f64 {
        self.dt * self.control_every as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    pub h: [f64; 3],
    pub mu: f64,
    pub c_delta: f64,
    pub lambda: f64,
    pub phi_fov_deg: f64,
    pub q_u: [f64; 2],
    pub cost_reference: CostReference,
    pub mpc: MpcParams,
    pub nonlinear: NonlinearGains,
}

impl Default for ControllerParams {
    fn default() -> Self {
        let c = ClfCbfConfig::default();
        ControllerParams {
            h: c.clf.h,
            mu: c.clf.mu,
            c_delta: c.clf.c_delta,
            lambda: c.cbf.lambda,
            phi_fov_deg: c.cbf.phi_fov.to_degrees(),
            q_u: c.q_u,
            cost_reference: c.cost_reference,
            mpc: MpcParams::default(),
            nonlinear: NonlinearGains::default(),
        }
    }
}

impl ControllerParams {
    pub fn phi_fov(&self) -> f64 {
        self.phi_fov_deg.to_radians()
    }

    pub fn clf_cbf(&self) -> ClfCbfConfig {
        ClfCbfConfig {
            clf: ClfParams {
                h: self.h,
                mu: self.mu,
                c_delta: self.c_delta,
            },
            cbf: CbfParams {
                phi_fov: self.phi_fov(),
                lambda: self.lambda,
            },
            q_u: self.q_u,
            cost_reference: self.cost_reference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionParams {
    pub board: BoardGeometry,
    /// Backboard samples per square metre.
    pub density: f64,
    pub cloud_noise: f64,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub markers: MarkerLayout,
    pub marker_points: usize,
    pub marker_noise: f64,
    pub clutter: usize,
    pub coarse_pos_sigma: f64,
    pub coarse_yaw_sigma_deg: f64,
    pub detection_range: f64,
    /// Noise on the collector's pose broadcast.
    pub collector_noise: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        PerceptionParams {
            board: BoardGeometry::default(),
            density: 2500.0,
            cloud_noise: 0.005,
            ransac_threshold: 0.02,
            ransac_iterations: 100,
            markers: MarkerLayout::default(),
            marker_points: 30,
            marker_noise: 0.005,
            clutter: 200,
            coarse_pos_sigma: 0.15,
            coarse_yaw_sigma_deg: 8.0,
            detection_range: 6.0,
            collector_noise: 0.0,
        }
    }
}

impl PerceptionParams {
    pub fn board_pipeline(&self, fov: f64) -> BoardPipeline {
        BoardPipeline {
            ransac_threshold: self.ransac_threshold,
            ransac_iterations: self.ransac_iterations,
            fov,
            board_length: self.board.length,
        }
    }
}

/// Speed caps of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapSpec {
    pub v_max: f64,
    pub omega_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionParams {
    pub xi: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub success_rho: f64,
    pub success_theta_deg: f64,
    pub dock_lat_tol: f64,
    pub dock_yaw_tol_deg: f64,
    pub dock_standoff: f64,
    /// Trolley origin to robot origin when grasped.
    pub grasp_offset: f64,
    /// Navigation stops this far behind the estimated grasp pose.
    pub pre_grasp_back: f64,
    /// Navigation stops this far behind the docking slot.
    pub pre_dock_back: f64,
    pub spin_rate: f64,
    /// Trolley body ahead of the backboard, for keeping navigation clear of it.
    pub trolley_length: f64,
    pub trolley_width: f64,
    pub navigation: CapSpec,
    pub approaching: CapSpec,
    pub docking: CapSpec,
    pub a_max: f64,
    pub alpha_max: f64,
}

impl Default for MissionParams {
    fn default() -> Self {
        let m = MissionConfig::default();
        let l = m.stage_limits;
        let cap = |l: InputLimits| CapSpec {
            v_max: l.v_max,
            omega_max: l.omega_max,
        };
        MissionParams {
            xi: m.xi,
            rho1: m.rho1,
            rho2: m.rho2,
            success_rho: m.success_rho,
            success_theta_deg: m.success_theta.to_degrees(),
            dock_lat_tol: m.dock_lat_tol,
            dock_yaw_tol_deg: m.dock_yaw_tol.to_degrees(),
            dock_standoff: m.dock_standoff,
            grasp_offset: 0.45,
            pre_grasp_back: 0.9,
            pre_dock_back: 1.8,
            spin_rate: 0.3,
            trolley_length: 0.9,
            trolley_width: 0.6,
            navigation: cap(l.navigation),
            approaching: cap(l.approaching),
            docking: cap(l.docking),
            a_max: l.navigation.a_max,
            alpha_max: l.navigation.alpha_max,
        }
    }
}

impl MissionParams {
    pub fn stage_limits(&self) -> StageLimits {
        let lim = |c: CapSpec| InputLimits::new(c.v_max, c.omega_max, self.a_max, self.alpha_max);
        StageLimits {
            navigation: lim(self.navigation),
            approaching: lim(self.approaching),
            docking: lim(self.docking),
        }
    }

    pub fn mission_config(&self, trolley_count: usize) -> MissionConfig {
        MissionConfig {
            xi: self.xi,
            rho1: self.rho1,
            rho2: self.rho2,
            success_rho: self.success_rho,
            success_theta: self.success_theta_deg.to_radians(),
            dock_lat_tol: self.dock_lat_tol,
            dock_yaw_tol: self.dock_yaw_tol_deg.to_radians(),
            trolley_count,
            stage_limits: self.stage_limits(),
            dock_standoff: self.dock_standoff,
        }
    }

    /// Axis-aligned bounds of the trolley body at `trolley`.
    pub fn trolley_bounds(&self, trolley: &Pose2) -> ([f64; 2], [f64; 2]) {
        let hw = 0.5 * self.trolley_width;
        let corners = [[0.0, -hw], [0.0, hw], [self.trolley_length, -hw], [self.trolley_length, hw]];
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in corners {
            let p = trolley.transform_point(c);
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Robot pose that grasps a trolley at `trolley`.
    pub fn grasp_pose(&self, trolley: &Pose2) -> Pose2 {
        crate::geometry::compose(trolley, &Pose2::new(-self.grasp_offset, 0.0, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub runs: usize,
    pub controller: ControllerChoice,
    pub map: MapConfig,
    pub robot_start: PoseSpec,
    pub collector: PoseSpec,
    pub trolleys: Vec<PoseSpec>,
    /// One search waypoint per trolley, visited before looking around.
    pub waypoints: Vec<[f64; 2]>,
    pub sampling: SamplingRegion,
    pub sim: SimConfig,
    pub controller_params: ControllerParams,
    pub perception: PerceptionParams,
    pub mission: MissionParams,
    /// Directory of the scenario file, for resolving the map path.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            seed: 1,
            runs: 30,
            controller: ControllerChoice::Clfcbf,
            map: MapConfig::default(),
            robot_start: PoseSpec::default(),
            collector: PoseSpec::default(),
            trolleys: Vec::new(),
            waypoints: Vec::new(),
            sampling: SamplingRegion::default(),
            sim: SimConfig::default(),
            controller_params: ControllerParams::default(),
            perception: PerceptionParams::default(),
            mission: MissionParams::default(),
            base_dir: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn check_interval(name: &str, iv: [f64; 2]) -> Result<(), HarnessError> {
    if iv.iter().all(|v| v.is_finite()) && iv[0] <= iv[1] {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be a finite [lo, hi] interval, got {iv:?}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), HarnessError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: ScenarioConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn map_path(&self) -> Option<PathBuf> {
        self.map.file.as_ref().map(|f| match &self.base_dir {
            Some(dir) if f.is_relative() => dir.join(f),
            _ => f.clone(),
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let sim = &self.sim;
        check_positive("sim.dt", sim.dt)?;
        if sim.control_every == 0 {
            return Err(invalid("sim.control_every must be at least 1"));
        }
        for (n, v) in [
            ("sim.approach_timeout_s", sim.approach_timeout_s),
            ("sim.mission_timeout_s", sim.mission_timeout_s),
            ("sim.fov_loss_s", sim.fov_loss_s),
            ("sim.settle_timeout_s", sim.settle_timeout_s),
            ("sim.backoff_m", sim.backoff_m),
            ("sim.replan_jump_m", sim.replan_jump_m),
            ("sim.replan_jump_deg", sim.replan_jump_deg),
            ("sim.replan_tracking_m", sim.replan_tracking_m),
        ] {
            check_positive(n, v)?;
        }
        if !(sim.noise_pos >= 0.0 && sim.noise_yaw_deg >= 0.0 && sim.view_margin_deg >= 0.0) {
            return Err(invalid("noise and margins must be non-negative"));
        }
        check_interval("sampling.forward", self.sampling.forward)?;
        check_interval("sampling.lateral", self.sampling.lateral)?;
        if self.sampling.forward[1] >= 0.0 {
            return Err(invalid("sampling.forward must lie behind the trolley (negative)"));
        }
        if !(self.sampling.heading_spread_deg >= 0.0 && self.sampling.heading_spread_deg < 90.0) {
            return Err(invalid("sampling.heading_spread_deg must be in [0, 90)"));
        }
        self.controller_params
            .clf_cbf()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        let mpc = &self.controller_params.mpc;
        if mpc.horizon == 0 || mpc.grid == 0 {
            return Err(invalid("mpc horizon and grid must be at least 1"));
        }
        let p = &self.perception;
        for (n, v) in [
            ("perception.density", p.density),
            ("perception.ransac_threshold", p.ransac_threshold),
            ("perception.board.length", p.board.length),
            ("perception.board.height", p.board.height),
            ("perception.markers.separation", p.markers.separation),
            ("perception.detection_range", p.detection_range),
        ] {
            check_positive(n, v)?;
        }
        if p.ransac_iterations == 0 || p.marker_points < 2 {
            return Err(invalid("perception needs ransac iterations and at least two marker points"));
        }
        let m = &self.mission;
        for (n, v) in [
            ("mission.grasp_offset", m.grasp_offset),
            ("mission.pre_grasp_back", m.pre_grasp_back),
            ("mission.pre_dock_back", m.pre_dock_back),
            ("mission.spin_rate", m.spin_rate),
            ("mission.trolley_length", m.trolley_length),
            ("mission.trolley_width", m.trolley_width),
        ] {
            check_positive(n, v)?;
        }
        m.mission_config(self.trolleys.len())
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if self.map.file.is_none() {
            check_positive("map.width_m", self.map.width_m)?;
            check_positive("map.height_m", self.map.height_m)?;
            check_positive("map.resolution", self.map.resolution)?;
        }
        if !(self.map.inflation_radius >= 0.0) {
            return Err(invalid("map.inflation_radius must be non-negative"));
        }
        for r in &self.map.obstacles {
            if !(r.min[0] <= r.max[0] && r.min[1] <= r.max[1]) {
                return Err(invalid(format!("obstacle {r:?} is not well-formed")));
            }
        }
        if let Some(path) = self.map_path() {
            if !path.is_file() {
                return Err(invalid(format!("map file {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// Occupancy grid from the map file or the inline rectangles, inflated.
    pub fn build_grid(&self) -> Result<OccupancyGrid, HarnessError> {
        let mut grid = match self.map_path() {
            Some(path) => {
                let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io { path, source })?;
                OccupancyGrid::from_text(&text)?
            }
            None => {
                let w = (self.map.width_m / self.map.resolution).round() as usize;
                let h = (self.map.height_m / self.map.resolution).round() as usize;
                OccupancyGrid::new(w, h, self.map.resolution, Pose2::IDENTITY)
            }
        };
        let rects: Vec<_> = self.map.obstacles.iter().map(|r| (r.min, r.max)).collect();
        grid.inflate(self.map.inflation_radius);
        grid.fill_rects(&rects);
        Ok(grid)
    }
}
