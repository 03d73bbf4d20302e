//! C interface to the trolleybot library.
//!
//! Every function returns a [`TbStatus`]. On failure a message is stored per
//! thread and can be read with [`tb_last_error`]. Strings handed out by the
//! library must be released with [`tb_string_free`], controllers with
//! [`tb_controller_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trolleybot::controller::{solve_qp, ClfCbfConfig, ClfCbfController, QpProblem, QpStatus, Row, StepInput};
use trolleybot::geometry::{compose, relative, Pose2};
use trolleybot::harness::{run_batch, run_full_mission, ControllerChoice, ScenarioConfig};
use trolleybot::vehicle::{step_unicycle, ControlInput, InputLimits};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Infeasible = 3,
    Failed = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbQpStatus {
    Optimal = 0,
    RelaxedView = 1,
    Infeasible = 2,
}

impl From<QpStatus> for TbQpStatus {
    fn from(s: QpStatus) -> Self {
        match s {
            QpStatus::Optimal => TbQpStatus::Optimal,
            QpStatus::RelaxedCbf => TbQpStatus::RelaxedView,
            QpStatus::Infeasible => TbQpStatus::Infeasible,
        }
    }
}

/// Planar pose; heading in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TbPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TbInput {
    pub v: f64,
    pub omega: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TbLimits {
    pub v_max: f64,
    pub omega_max: f64,
    pub a_max: f64,
    pub alpha_max: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TbStepInput {
    /// Virtual target in the robot frame.
    pub x_rel: TbPose,
    /// Zero disables the view constraint.
    pub has_target: i32,
    /// Point to keep in view, robot frame.
    pub target_x: f64,
    pub target_y: f64,
    pub v_ref: f64,
    pub omega_ref: f64,
    pub limits: TbLimits,
    pub dt: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TbStepOutput {
    pub u: TbInput,
    pub lyapunov: f64,
    /// NaN when the view constraint was inactive.
    pub barrier: f64,
    pub slack: f64,
    pub status: TbQpStatus,
    /// Nonzero when the solver failed and the previous input was decayed.
    pub fallback: i32,
}

/// Opaque CLF-CBF tracking controller.
pub struct TbController {
    inner: ClfCbfController,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Fail(TbStatus, String);

impl Fail {
    fn invalid(msg: impl ToString) -> Self {
        Fail(TbStatus::InvalidArgument, msg.to_string())
    }
    fn failed(msg: impl ToString) -> Self {
        Fail(TbStatus::Failed, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TbStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TbStatus::Panic
        }
    }
}

unsafe fn read<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(TbStatus::NullPointer, format!("{name} is null")))
}

unsafe fn write<T>(p: *mut T, value: T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail(TbStatus::NullPointer, format!("{name} is null")));
    }
    p.write(value);
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(TbStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(TbStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::invalid(format!("{name} is not UTF-8")))
}

fn pose(p: &TbPose) -> Pose2 {
    Pose2::new(p.x, p.y, p.theta)
}

fn tb_pose(p: Pose2) -> TbPose {
    TbPose {
        x: p.x,
        y: p.y,
        theta: p.theta,
    }
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn tb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Advances a unicycle by `dt` under a constant input.
///
/// # Safety
/// Pointers must be null or valid for the access implied by their type.
#[no_mangle]
pub unsafe extern "C" fn tb_step_unicycle(pose_in: *const TbPose, u: *const TbInput, dt: f64, out: *mut TbPose) -> TbStatus {
    guard(|| {
        let p = pose(read(pose_in, "pose")?);
        let u = read(u, "input")?;
        let next = step_unicycle(&p, &ControlInput::new(u.v, u.omega), dt).map_err(Fail::invalid)?;
        write(out, tb_pose(next), "out")
    })
}

/// `a` followed by `b`, with `b` expressed in the frame of `a`.
///
/// # Safety
/// Pointers must be null or valid for the access implied by their type.
#[no_mangle]
pub unsafe extern "C" fn tb_compose(a: *const TbPose, b: *const TbPose, out: *mut TbPose) -> TbStatus {
    guard(|| {
        let c = compose(&pose(read(a, "a")?), &pose(read(b, "b")?));
        write(out, tb_pose(c), "out")
    })
}

/// `b` expressed in the frame of `a`.
///
/// # Safety
/// Pointers must be null or valid for the access implied by their type.
#[no_mangle]
pub unsafe extern "C" fn tb_relative(a: *const TbPose, b: *const TbPose, out: *mut TbPose) -> TbStatus {
    guard(|| {
        let c = relative(&pose(read(a, "a")?), &pose(read(b, "b")?));
        write(out, tb_pose(c), "out")
    })
}

/// Minimizes `0.5 z'Pz + q'z` subject to `A z <= b` and `lower <= z <= upper`.
/// `p` is `n*n` row-major, `a` is `m*n` row-major. Infinite bounds are allowed.
/// Returns `Infeasible` when no point satisfies the constraints.
///
/// # Safety
/// Array pointers must hold the stated number of elements; `a` and `b` may be
/// null when `m` is zero.
#[no_mangle]
pub unsafe extern "C" fn tb_qp_solve(
    n: usize,
    p: *const f64,
    q: *const f64,
    m: usize,
    a: *const f64,
    b: *const f64,
    lower: *const f64,
    upper: *const f64,
    z_out: *mut f64,
    objective_out: *mut f64,
) -> TbStatus {
    guard(|| {
        if n == 0 {
            return Err(Fail::invalid("n must be positive"));
        }
        let a = slice(a, m * n, "a")?;
        let b = slice(b, m, "b")?;
        let problem = QpProblem {
            p: slice(p, n * n, "p")?.to_vec(),
            q: slice(q, n, "q")?.to_vec(),
            rows: (0..m).map(|i| Row::le(a[i * n..(i + 1) * n].to_vec(), b[i])).collect(),
            lower: slice(lower, n, "lower")?.to_vec(),
            upper: slice(upper, n, "upper")?.to_vec(),
        };
        if z_out.is_null() {
            return Err(Fail(TbStatus::NullPointer, "z_out is null".into()));
        }
        let sol = solve_qp(&problem).map_err(Fail::invalid)?;
        if sol.status != QpStatus::Optimal {
            return Err(Fail(TbStatus::Infeasible, "constraints are infeasible".into()));
        }
        std::slice::from_raw_parts_mut(z_out, n).copy_from_slice(&sol.z);
        if !objective_out.is_null() {
            objective_out.write(sol.objective);
        }
        Ok(())
    })
}

/// Creates a controller. `config_json` may be null for the defaults.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tb_controller_new(config_json: *const c_char, out: *mut *mut TbController) -> TbStatus {
    guard(|| {
        let config = if config_json.is_null() {
            ClfCbfConfig::default()
        } else {
            serde_json::from_str(text(config_json, "config_json")?).map_err(Fail::invalid)?
        };
        let inner = ClfCbfController::new(config).map_err(Fail::invalid)?;
        write(out, Box::into_raw(Box::new(TbController { inner })), "out")
    })
}

/// Sets the input the next step's rate limits are measured from.
///
/// # Safety
/// `ctl` must come from [`tb_controller_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tb_controller_reset(ctl: *mut TbController, prev: TbInput) -> TbStatus {
    guard(|| {
        let ctl = ctl
            .as_mut()
            .ok_or_else(|| Fail(TbStatus::NullPointer, "controller is null".into()))?;
        ctl.inner.reset(ControlInput::new(prev.v, prev.omega));
        Ok(())
    })
}

/// One tracking step.
///
/// # Safety
/// `ctl` must come from [`tb_controller_new`]; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tb_controller_step(
    ctl: *mut TbController,
    input: *const TbStepInput,
    out: *mut TbStepOutput,
) -> TbStatus {
    guard(|| {
        let ctl = ctl
            .as_mut()
            .ok_or_else(|| Fail(TbStatus::NullPointer, "controller is null".into()))?;
        let i = read(input, "input")?;
        let l = i.limits;
        let limits = InputLimits::new(l.v_max, l.omega_max, l.a_max, l.alpha_max);
        limits.validate().map_err(Fail::invalid)?;
        let rec = ctl
            .inner
            .step(&StepInput {
                x_rel: pose(&i.x_rel),
                target: (i.has_target != 0).then_some([i.target_x, i.target_y]),
                v_v: i.v_ref,
                omega_v: i.omega_ref,
                limits,
                dt: i.dt,
            })
            .map_err(Fail::invalid)?;
        write(
            out,
            TbStepOutput {
                u: TbInput {
                    v: rec.u.v,
                    omega: rec.u.omega,
                },
                lyapunov: rec.v_lyap,
                barrier: rec.h,
                slack: rec.delta,
                status: rec.status.into(),
                fallback: i32::from(rec.fallback),
            },
            "out",
        )
    })
}

/// # Safety
/// `ctl` must be null or come from [`tb_controller_new`], and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn tb_controller_free(ctl: *mut TbController) {
    if !ctl.is_null() {
        drop(Box::from_raw(ctl));
    }
}

fn hand_out(s: String, out: *mut *mut c_char) -> Result<(), Fail> {
    let c = CString::new(s).map_err(Fail::failed)?;
    unsafe { write(out, c.into_raw(), "out") }
}

/// Runs a controller comparison on a scenario and returns the summary JSON.
/// `controller` is a name (`clfcbf`, `mpc`, `nonlinear`) or null for all three.
///
/// # Safety
/// Strings must be NUL-terminated; `summary_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tb_run_batch_json(
    scenario_json: *const c_char,
    controller: *const c_char,
    runs: usize,
    seed: u64,
    summary_out: *mut *mut c_char,
) -> TbStatus {
    guard(|| {
        let cfg = ScenarioConfig::from_json(text(scenario_json, "scenario_json")?).map_err(Fail::invalid)?;
        let controllers: Vec<ControllerChoice> = if controller.is_null() {
            ControllerChoice::ALL.to_vec()
        } else {
            vec![text(controller, "controller")?.parse().map_err(Fail::invalid)?]
        };
        let outcome = run_batch(&cfg, &controllers, runs, seed).map_err(Fail::failed)?;
        hand_out(serde_json::to_string(&outcome.summary).map_err(Fail::failed)?, summary_out)
    })
}

/// Runs the full mission on a scenario and returns the report JSON.
///
/// # Safety
/// `scenario_json` must be NUL-terminated; `report_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tb_run_mission_json(scenario_json: *const c_char, seed: u64, report_out: *mut *mut c_char) -> TbStatus {
    guard(|| {
        let cfg = ScenarioConfig::from_json(text(scenario_json, "scenario_json")?).map_err(Fail::invalid)?;
        let report = run_full_mission(&cfg, seed).map_err(Fail::failed)?;
        hand_out(serde_json::to_string(&report).map_err(Fail::failed)?, report_out)
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn tb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
