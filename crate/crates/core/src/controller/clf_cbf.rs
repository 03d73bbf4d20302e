use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpProblem, QpStatus, Row};
use super::ControllerError;
use crate::geometry::Pose2;
use crate::vehicle::{clamp_input, ControlInput, InputLimits};

/// Lyapunov weights `H = diag(h)`, decay rate and slack penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClfParams {
    pub h: [f64; 3],
    pub mu: f64,
    pub c_delta: f64,
}

impl Default for ClfParams {
    fn default() -> Self {
        ClfParams {
            h: [1.0, 2.0, 0.5],
            mu: 0.8,
            c_delta: 50.0,
        }
    }
}

impl ClfParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.h.iter().all(|&w| w > 0.0 && w.is_finite())
            && self.mu > 0.0
            && self.mu.is_finite()
            && self.c_delta > 0.0
            && self.c_delta.is_finite()
        {
            Ok(())
        } else {
            Err(ControllerError::BadParams(format!("{self:?}")))
        }
    }
}

/// View half-angle and barrier decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfParams {
    pub phi_fov: f64,
    pub lambda: f64,
}

impl Default for CbfParams {
    fn default() -> Self {
        CbfParams {
            phi_fov: 35f64.to_radians(),
            lambda: 1.0,
        }
    }
}

impl CbfParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.phi_fov > 0.0 && self.phi_fov < std::f64::consts::FRAC_PI_2 && self.lambda > 0.0 && self.lambda.is_finite() {
            Ok(())
        } else {
            Err(ControllerError::BadParams(format!("{self:?}")))
        }
    }
}

/// Inside this range the bearing derivative blows up and the view row is dropped.
pub const RHO_MIN: f64 = 0.05;

/// `x' H x` for diagonal `H`.
fn quad(x: &Pose2, h: &[f64; 3]) -> f64 {
    h[0] * x.x * x.x + h[1] * x.y * x.y + h[2] * x.theta * x.theta
}

/// `V = (x' H x)^2 / 4`.
pub fn clf_value(x: &Pose2, params: &ClfParams) -> f64 {
    let s = quad(x, &params.h);
    0.25 * s * s
}

/// Affine form of `dV/dt` in the robot input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClfRow {
    pub coef_v: f64,
    pub coef_omega: f64,
    /// Part of `dV/dt` driven by the virtual target alone.
    pub drift: f64,
    pub value: f64,
}

impl ClfRow {
    pub fn v_dot(&self, u: &ControlInput) -> f64 {
        self.coef_v * u.v + self.coef_omega * u.omega + self.drift
    }

    /// `coef . (v, omega, delta) <= bound` encoding `dV/dt + mu V <= delta`.
    pub fn as_row(&self, mu: f64, n: usize) -> Row {
        let mut c = vec![0.0; n];
        c[0] = self.coef_v;
        c[1] = self.coef_omega;
        c[2] = -1.0;
        Row::le(c, -self.drift - mu * self.value)
    }
}

pub fn clf_row(x: &Pose2, v_v: f64, omega_v: f64, params: &ClfParams) -> ClfRow {
    let [h1, h2, h3] = params.h;
    let s = quad(x, &params.h);
    let (sin, cos) = x.theta.sin_cos();
    ClfRow {
        coef_v: -s * h1 * x.x,
        coef_omega: s * ((h1 - h2) * x.x * x.y - h3 * x.theta),
        drift: s * (h1 * x.x * v_v * cos + h2 * x.y * v_v * sin + h3 * x.theta * omega_v),
        value: 0.25 * s * s,
    }
}

/// `h = (phi_fov^2 - phi^2) / 2`.
pub fn cbf_value(phi: f64, params: &CbfParams) -> f64 {
    0.5 * (params.phi_fov * params.phi_fov - phi * phi)
}

/// Affine form of `dh/dt` for a static point seen at `obs` in the robot frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfRow {
    pub coef_v: f64,
    pub coef_omega: f64,
    pub phi: f64,
    pub value: f64,
}

impl CbfRow {
    pub fn h_dot(&self, u: &ControlInput) -> f64 {
        self.coef_v * u.v + self.coef_omega * u.omega
    }

    /// `dh/dt + lambda h >= 0` as a `<=` row; an optional extra slack column
    /// relaxes it.
    pub fn as_row(&self, lambda: f64, n: usize, slack: Option<usize>) -> Row {
        let mut c = vec![0.0; n];
        c[0] = -self.coef_v;
        c[1] = -self.coef_omega;
        if let Some(k) = slack {
            c[k] = -1.0;
        }
        Row::le(c, lambda * self.value)
    }
}

/// `None` when the point is closer than [`RHO_MIN`].
pub fn cbf_row(obs: [f64; 2], params: &CbfParams) -> Option<CbfRow> {
    let rho2 = obs[0] * obs[0] + obs[1] * obs[1];
    if rho2 <= RHO_MIN * RHO_MIN {
        return None;
    }
    let phi = obs[1].atan2(obs[0]);
    Some(CbfRow {
        coef_v: -phi * obs[1] / rho2,
        coef_omega: phi,
        phi,
        value: cbf_value(phi, params),
    })
}

/// What the QP cost pulls the input toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostReference {
    /// `u' Q_u u`.
    Zero,
    /// `(u - u_V)' Q_u (u - u_V)` with the virtual target's velocity.
    #[default]
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClfCbfConfig {
    pub clf: ClfParams,
    pub cbf: CbfParams,
    pub q_u: [f64; 2],
    pub cost_reference: CostReference,
}

impl Default for ClfCbfConfig {
    fn default() -> Self {
        ClfCbfConfig {
            clf: ClfParams::default(),
            cbf: CbfParams::default(),
            q_u: [1.0, 0.5],
            cost_reference: CostReference::Nominal,
        }
    }
}

impl ClfCbfConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        self.clf.validate()?;
        self.cbf.validate()?;
        if self.q_u.iter().all(|&w| w > 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(ControllerError::BadParams(format!("q_u {:?}", self.q_u)))
        }
    }
}

/// Everything one controller step consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInput {
    /// Virtual target pose in the robot frame.
    pub x_rel: Pose2,
    /// Point to keep in view, in the robot frame; `None` disables the view row.
    pub target: Option<[f64; 2]>,
    pub v_v: f64,
    pub omega_v: f64,
    pub limits: InputLimits,
    pub dt: f64,
}

/// Per-step log record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub v_lyap: f64,
    pub h: f64,
    pub phi: f64,
    pub delta: f64,
    pub cbf_relaxation: f64,
    pub u: ControlInput,
    pub status: QpStatus,
    pub kkt_residual: f64,
    /// The QP failed outright and the previous input was decayed.
    pub fallback: bool,
}

/// CLF-CBF-QP tracking controller. Holds only parameters and the last input.
#[derive(Debug, Clone, PartialEq)]
pub struct ClfCbfController {
    pub config: ClfCbfConfig,
    pub prev_u: ControlInput,
}

impl ClfCbfController {
    pub fn new(config: ClfCbfConfig) -> Result<Self, ControllerError> {
        config.validate()?;
        Ok(ClfCbfController {
            config,
            prev_u: ControlInput::ZERO,
        })
    }

    pub fn reset(&mut self, prev: ControlInput) {
        self.prev_u = prev;
    }

    /// Builds the QP over `(v, omega, delta)` and, when `relax_view` is set, a
    /// fourth slack on the view row.
    pub fn build_problem(&self, input: &StepInput, relax_view: bool) -> (QpProblem, ClfRow, Option<CbfRow>) {
        let cfg = &self.config;
        let cbf = input.target.and_then(|p| cbf_row(p, &cfg.cbf));
        let relax = relax_view && cbf.is_some();
        let n = if relax { 4 } else { 3 };
        let mut p = vec![0.0; n * n];
        p[0] = 2.0 * cfg.q_u[0];
        p[n + 1] = 2.0 * cfg.q_u[1];
        p[2 * n + 2] = 2.0 * cfg.clf.c_delta;
        if relax {
            p[3 * n + 3] = 2.0 * 100.0 * cfg.clf.c_delta;
        }
        let mut q = vec![0.0; n];
        if cfg.cost_reference == CostReference::Nominal {
            q[0] = -2.0 * cfg.q_u[0] * input.v_v;
            q[1] = -2.0 * cfg.q_u[1] * input.omega_v;
        }
        let (vlo, vhi) = input.limits.v_interval(self.prev_u.v, input.dt);
        let (wlo, whi) = input.limits.omega_interval(self.prev_u.omega, input.dt);
        let mut lower = vec![vlo, wlo, 0.0];
        let mut upper = vec![vhi, whi, f64::INFINITY];
        if relax {
            lower.push(0.0);
            upper.push(f64::INFINITY);
        }
        let clf = clf_row(&input.x_rel, input.v_v, input.omega_v, &cfg.clf);
        let mut rows = vec![clf.as_row(cfg.clf.mu, n)];
        if let Some(c) = &cbf {
            rows.push(c.as_row(cfg.cbf.lambda, n, relax.then_some(3)));
        }
        (
            QpProblem {
                p,
                q,
                rows,
                lower,
                upper,
            },
            clf,
            cbf,
        )
    }

    pub fn step(&mut self, input: &StepInput) -> Result<StepRecord, ControllerError> {
        if !input.x_rel.is_finite()
            || !input.v_v.is_finite()
            || !input.omega_v.is_finite()
            || input.target.is_some_and(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(ControllerError::NonFinite);
        }
        let (prob, clf, cbf) = self.build_problem(input, false);
        let mut sol = solve_qp(&prob)?;
        let mut status = sol.status;
        if status == QpStatus::Infeasible && cbf.is_some() {
            let (relaxed, _, _) = self.build_problem(input, true);
            sol = solve_qp(&relaxed)?;
            if sol.status == QpStatus::Optimal {
                status = QpStatus::RelaxedCbf;
            }
        }
        let (h, phi) = cbf.map_or((f64::NAN, f64::NAN), |c| (c.value, c.phi));
        let record = if sol.status == QpStatus::Optimal {
            let u = ControlInput::new(sol.z[0], sol.z[1]);
            StepRecord {
                v_lyap: clf.value,
                h,
                phi,
                delta: sol.z[2],
                cbf_relaxation: sol.z.get(3).copied().unwrap_or(0.0),
                u,
                status,
                kkt_residual: sol.kkt_residual,
                fallback: false,
            }
        } else {
            let u = clamp_input(self.prev_u.scaled(0.5), self.prev_u, &input.limits, input.dt);
            StepRecord {
                v_lyap: clf.value,
                h,
                phi,
                delta: f64::NAN,
                cbf_relaxation: f64::NAN,
                u,
                status: QpStatus::Infeasible,
                kkt_residual: f64::INFINITY,
                fallback: true,
            }
        };
        self.prev_u = record.u;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::relative;
    use crate::vehicle::{error_dynamics, integrate_arc};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn clf_value_examples() {
        let p = ClfParams::default();
        assert_eq!(clf_value(&Pose2::IDENTITY, &p), 0.0);
        let unit = ClfParams { h: [1.0; 3], ..p };
        assert_eq!(clf_value(&Pose2::new(1.0, 0.0, 0.0), &unit), 0.25);
        let h = ClfParams { h: [2.0, 1.0, 1.0], ..p };
        assert_eq!(clf_value(&Pose2::new(1.0, 1.0, 0.0), &h), 2.25);
    }

    #[test]
    fn clf_row_examples() {
        let r = clf_row(&Pose2::IDENTITY, 0.3, 0.1, &ClfParams::default());
        assert_eq!((r.coef_v, r.coef_omega, r.drift), (0.0, 0.0, 0.0));
        let unit = ClfParams {
            h: [1.0; 3],
            ..Default::default()
        };
        let r = clf_row(&Pose2::new(1.0, 0.0, 0.0), 0.0, 0.0, &unit);
        assert_eq!(r.coef_v, -1.0);
        assert_eq!(r.v_dot(&ControlInput::new(0.7, 0.0)), -0.7);
    }

    #[test]
    fn cbf_examples() {
        let p = CbfParams {
            phi_fov: 0.6109,
            lambda: 1.0,
        };
        assert_eq!(cbf_value(0.0, &p), 0.5 * 0.6109 * 0.6109);
        assert_eq!(cbf_value(0.6109, &p), 0.0);
        assert!((cbf_value(0.3, &p) - 0.1416).abs() < 5e-5);
        let r = cbf_row([1.0, 0.0], &p).unwrap();
        assert_eq!(r.h_dot(&ControlInput::new(0.4, -0.2)), 0.0);
        let r = cbf_row([1.0, 1.0], &p).unwrap();
        assert!((r.h_dot(&ControlInput::new(1.0, 0.0)) + PI / 8.0).abs() < 1e-12);
        assert!(cbf_row([0.01, 0.02], &p).is_none());
    }

    #[test]
    fn bearing_rate_for_pure_rotation() {
        // target dead ahead, robot turning left at 1 rad/s: phi decreases at 1 rad/s
        let obs = [1.0, 0.0];
        let dt = 1e-6;
        let next = relative(
            &integrate_arc(&Pose2::IDENTITY, &ControlInput::new(0.0, 1.0), dt),
            &Pose2::new(obs[0], obs[1], 0.0),
        );
        let phi_rate = next.y.atan2(next.x) / dt;
        assert!((phi_rate + 1.0).abs() < 1e-6);
    }

    fn random_state(rng: &mut ChaCha8Rng) -> (Pose2, ControlInput, f64, f64) {
        (
            Pose2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5)),
            ControlInput::new(rng.random_range(-0.5..0.5), rng.random_range(-0.7..0.7)),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.7..0.7),
        )
    }

    #[test]
    fn clf_row_matches_flow_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = ClfParams::default();
        let eps = 1e-5;
        for _ in 0..1000 {
            let (x, u, vv, wv) = random_state(&mut rng);
            let f = error_dynamics(&x, &u, vv, wv);
            let shift = |s: f64| Pose2 {
                x: x.x + s * f[0],
                y: x.y + s * f[1],
                theta: x.theta + s * f[2],
            };
            let fd = (clf_value(&shift(eps), &params) - clf_value(&shift(-eps), &params)) / (2.0 * eps);
            let row = clf_row(&x, vv, wv, &params);
            assert!((row.v_dot(&u) - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{} vs {fd}", row.v_dot(&u));
        }
    }

    #[test]
    fn qp_equilibrium_is_zero_input() {
        let mut ctl = ClfCbfController::new(ClfCbfConfig::default()).unwrap();
        let rec = ctl
            .step(&StepInput {
                x_rel: Pose2::IDENTITY,
                target: Some([1.0, 0.0]),
                v_v: 0.0,
                omega_v: 0.0,
                limits: InputLimits::new(0.22, 0.4, 0.5, 1.5),
                dt: 0.05,
            })
            .unwrap();
        assert_eq!(rec.status, QpStatus::Optimal);
        assert!(rec.u.v.abs() < 1e-15 && rec.u.omega.abs() < 1e-15 && rec.delta.abs() < 1e-15);
    }

    #[test]
    fn relaxes_view_row_when_boxes_conflict() {
        let mut ctl = ClfCbfController::new(ClfCbfConfig::default()).unwrap();
        // target just outside the view on the left while turning hard right
        ctl.reset(ControlInput::new(0.0, -0.4));
        let rec = ctl
            .step(&StepInput {
                x_rel: Pose2::new(0.5, -0.5, -0.5),
                target: Some([1.0, 0.8]),
                v_v: 0.0,
                omega_v: 0.0,
                limits: InputLimits::new(0.22, 0.4, 0.5, 1.5),
                dt: 0.05,
            })
            .unwrap();
        assert_eq!(rec.status, QpStatus::RelaxedCbf);
        assert!(rec.cbf_relaxation > 0.0);
        assert!(!rec.fallback);
    }

    #[test]
    fn tracks_constant_nominal_from_rest_on_target() {
        let limits = InputLimits::new(0.22, 0.4, 0.5, 1.5);
        let mut ctl = ClfCbfController::new(ClfCbfConfig::default()).unwrap();
        ctl.reset(ControlInput::new(0.2, 0.0));
        let mut robot = Pose2::IDENTITY;
        let mut virt = Pose2::IDENTITY;
        let mut u = ControlInput::new(0.2, 0.0);
        for k in 0..1000 {
            if k % 5 == 0 {
                let rec = ctl
                    .step(&StepInput {
                        x_rel: relative(&robot, &virt),
                        target: None,
                        v_v: 0.2,
                        omega_v: 0.0,
                        limits,
                        dt: 0.05,
                    })
                    .unwrap();
                u = rec.u;
            }
            robot = integrate_arc(&robot, &u, 0.01);
            virt = integrate_arc(&virt, &ControlInput::new(0.2, 0.0), 0.01);
            assert!(relative(&robot, &virt).norm() < 1e-3);
        }
    }

    #[test]
    fn zero_slack_step_decreases_lyapunov() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let limits = InputLimits::new(0.22, 0.4, 0.5, 1.5);
        let params = ClfParams::default();
        let dt = 1e-3;
        let mut checked = 0;
        for _ in 0..2000 {
            let (x, prev, vv, wv) = random_state(&mut rng);
            let robot = Pose2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-PI..PI));
            let virt = crate::geometry::compose(&robot, &x);
            let (vv, wv) = (vv.clamp(-0.2, 0.2), wv.clamp(-0.4, 0.4));
            let mut ctl = ClfCbfController::new(ClfCbfConfig::default()).unwrap();
            ctl.reset(ControlInput::new(prev.v.clamp(-0.2, 0.2), prev.omega.clamp(-0.4, 0.4)));
            let rec = ctl
                .step(&StepInput {
                    x_rel: x,
                    target: None,
                    v_v: vv,
                    omega_v: wv,
                    limits,
                    dt: 0.05,
                })
                .unwrap();
            if rec.status != QpStatus::Optimal || rec.delta > 1e-12 || rec.v_lyap <= 1e-9 {
                continue;
            }
            let robot = integrate_arc(&robot, &rec.u, dt);
            let virt = integrate_arc(&virt, &ControlInput::new(vv, wv), dt);
            let after = clf_value(&relative(&robot, &virt), &params);
            assert!(after < rec.v_lyap, "{after} >= {}", rec.v_lyap);
            checked += 1;
        }
        assert!(checked > 100, "only {checked} zero-slack states");
    }
}
