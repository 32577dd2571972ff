//! Minimum-attention MPC.
//!
//! The decision vector covers the window `k-n_s ..= k+n_c-1` of every input
//! channel (the past `n_s` samples pinned to the inputs actually applied),
//! and the count of nonzero first differences over that window is bounded by
//! `s`. The non-convex bound is handled by alternating between
//!
//! 1. a convex QP in the inputs, with the sparse target `v_hat` entering as a
//!    quadratic coupling term `mu * ||v_hat - Psi v||^2`, and
//! 2. the closed-form projection of `Psi v` onto `s`-sparse vectors.
//!
//! Standard MPC is the same QP without the window extension and coupling.

mod assemble;
mod closed_loop;
mod config;
mod controller;
mod relaxation;
mod sparse;
mod window;

pub use assemble::{assemble_first_step, PastInputs, StepProblem};
pub use closed_loop::{closed_loop, ClosedLoopRun, ClosedLoopSetup, ControllerKind};
pub use config::{HatInit, HorizonConfig};
pub use controller::{mampc_step, mampc_step_with, mpc_step, mpc_step_detailed, AttentionStepResult, MpcStepResult};
pub use relaxation::{solve_p0_brute_force, P0Solution};
pub use sparse::{best_s_sparse, best_s_sparse_masked};
pub use window::{build_difference_matrix, DifferenceMatrix, StackedInput};
