use super::config::{ControllerChoice, ControllerParams};
use super::HarnessError;
use crate::controller::{
    baseline_mpc_step, baseline_nonlinear_step, cbf_value, clf_value, ClfCbfController, ClfParams, CbfParams, MpcParams,
    NonlinearGains, QpStatus, StepInput,
};
use crate::geometry::{relative, Pose2};
use crate::planner::ReferencePath;
use crate::vehicle::{clamp_input, ControlInput, InputLimits};

enum Law {
    ClfCbf(ClfCbfController),
    Mpc(MpcParams),
    Nonlinear(NonlinearGains),
}

/// What one tracking step produced, for the log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TrackOutput {
    pub u: ControlInput,
    pub v_lyap: f64,
    pub h: f64,
    pub phi: f64,
    pub delta: f64,
    pub status: Option<QpStatus>,
}

/// Follows a reference path expressed in some frame with the chosen law.
pub(crate) struct Tracker {
    law: Law,
    clf: ClfParams,
    cbf: CbfParams,
    pub prev: ControlInput,
    pub path: ReferencePath,
    pub tau: f64,
    pub plan_id: u32,
}

impl Tracker {
    pub fn new(choice: ControllerChoice, params: &ControllerParams) -> Result<Self, HarnessError> {
        let cfg = params.clf_cbf();
        let law = match choice {
            ControllerChoice::Clfcbf => Law::ClfCbf(ClfCbfController::new(cfg)?),
            ControllerChoice::Mpc => Law::Mpc(params.mpc),
            ControllerChoice::Nonlinear => Law::Nonlinear(params.nonlinear),
        };
        Ok(Tracker {
            law,
            clf: cfg.clf,
            cbf: cfg.cbf,
            prev: ControlInput::ZERO,
            path: ReferencePath::hold(Pose2::IDENTITY),
            tau: 0.0,
            plan_id: 0,
        })
    }

    pub fn set_path(&mut self, path: ReferencePath) {
        self.path = path;
        self.tau = 0.0;
        self.plan_id += 1;
    }

    /// Virtual target pose at the current path time.
    pub fn reference(&self) -> Pose2 {
        self.path.sample(self.tau).pose
    }

    pub fn finished(&self) -> bool {
        self.tau >= self.path.duration()
    }

    /// Logs an input that was applied without the tracking law.
    pub fn bypass(&mut self, u: ControlInput, robot: &Pose2) -> TrackOutput {
        self.prev = u;
        TrackOutput {
            u,
            v_lyap: clf_value(&relative(robot, &self.reference()), &self.clf),
            h: f64::NAN,
            phi: f64::NAN,
            delta: f64::NAN,
            status: None,
        }
    }

    /// One control step. `robot` is in the path frame; `view` is the point to
    /// keep in view, in the robot frame.
    pub fn step(
        &mut self,
        robot: &Pose2,
        view: Option<[f64; 2]>,
        limits: &InputLimits,
        dt: f64,
    ) -> Result<TrackOutput, HarnessError> {
        let vt = self.path.sample(self.tau);
        let x_rel = relative(robot, &vt.pose);
        let v_lyap = clf_value(&x_rel, &self.clf);
        let bearing = view.map(|p| p[1].atan2(p[0]));
        let (h, phi) = bearing.map_or((f64::NAN, f64::NAN), |b| (cbf_value(b, &self.cbf), b));
        let out = match &mut self.law {
            Law::ClfCbf(ctrl) => {
                ctrl.reset(self.prev);
                let rec = ctrl.step(&StepInput {
                    x_rel,
                    target: view,
                    v_v: vt.v,
                    omega_v: vt.omega,
                    limits: *limits,
                    dt,
                })?;
                TrackOutput {
                    u: rec.u,
                    v_lyap,
                    h,
                    phi,
                    delta: rec.delta,
                    status: Some(rec.status),
                }
            }
            Law::Mpc(params) => {
                let out = baseline_mpc_step(robot, &self.path, self.tau, self.prev, limits, dt, params);
                TrackOutput {
                    u: out.u,
                    v_lyap,
                    h,
                    phi,
                    delta: f64::NAN,
                    status: None,
                }
            }
            Law::Nonlinear(gains) => {
                let goal = relative(robot, &self.path.goal_pose());
                let u = clamp_input(baseline_nonlinear_step(&goal, limits, gains), self.prev, limits, dt);
                TrackOutput {
                    u,
                    v_lyap,
                    h,
                    phi,
                    delta: f64::NAN,
                    status: None,
                }
            }
        };
        self.prev = out.u;
        self.tau += dt;
        Ok(out)
    }
}
