//! Kinematic MPC raceline tracker with an internal QP solver.

pub mod qp;
pub mod tracker;

pub use qp::{solve, AdmmSettings, QpError, QpProblem, QpSolution, WarmStart};
pub use tracker::{assemble_qp, build_reference, linearize, HorizonReference, MpcConfig, MpcDiagnostics, MpcTracker};
