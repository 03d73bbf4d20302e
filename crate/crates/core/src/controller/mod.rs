//! Tracking controllers: the CLF-CBF quadratic program and two baselines.

use thiserror::Error;

pub mod baselines;
pub mod clf_cbf;
pub mod qp;

pub use baselines::{baseline_mpc_step, baseline_nonlinear_step, MpcParams, NonlinearGains};
pub use clf_cbf::{
    cbf_row, cbf_value, clf_row, clf_value, CbfParams, ClfCbfConfig, ClfCbfController, ClfParams, CostReference,
    StepInput, StepRecord, RHO_MIN,
};
pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus, Row, Sense};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("cost matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("inconsistent problem dimensions")]
    Dimension,
    #[error("non-finite problem data")]
    NonFinite,
    #[error("invalid controller parameters: {0}")]
    BadParams(String),
}
