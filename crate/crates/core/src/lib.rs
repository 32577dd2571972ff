//! Minimum-attention model predictive control.
//!
//! A receding-horizon controller whose input-change sequence is pushed toward
//! `s`-sparsity by alternating between a convex QP and a hard-thresholding
//! step, together with the pieces needed to benchmark it against standard MPC:
//! discrete LTI models and horizon lifting, a dense ADMM QP solver, nonlinear
//! plant simulators (quadruple tank, SOFC stack), PRBS excitation,
//! deterministic subspace identification and closed-loop metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod error;
pub mod exec;
pub mod lti;
pub mod mampc;
pub mod metrics;
pub mod plants;
pub mod qp;
pub mod sysid;

pub use error::{Error, Result};
pub use lti::{lift, simulate, zoh_discretize, LiftedPrediction, LtiModel};
pub use mampc::{
    best_s_sparse, build_difference_matrix, closed_loop, mampc_step, mpc_step, AttentionStepResult,
    ClosedLoopSetup, DifferenceMatrix, HorizonConfig, StackedInput,
};
pub use metrics::{sparse_density, tracking_error, ClosedLoopLog, ControllerTag, LogRow};
pub use plants::{PlantModel, QuadrupleTank, Sofc};
pub use qp::{qp_solve, QpProblem, QpSolution, QpStatus};
