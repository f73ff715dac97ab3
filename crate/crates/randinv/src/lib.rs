//! Randomized solvers for linear and nonlinear Bayesian inverse problems.
//!
//! The crate implements a family of sample-average-approximation methods for
//! maximum-a-posteriori estimation: perturbed-data averaging (RMAP), misfit
//! sketching (RMA), joint and nested combinations, prior-precision and
//! prior-covariance sketching (right sketching), a single-step ensemble
//! Kalman update, and the everything-randomized variant. It also ships four
//! benchmark problems, concentration/perturbation bound checks, and a CLI.

pub mod bounds;
pub mod cg;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod map_solvers;
pub mod methods;
pub mod problem;
pub mod problems;
pub mod pto;
pub mod randomize;

pub use covariance::Covariance;
pub use error::{Error, Result};
pub use problem::{InverseProblem, SolveFlags, SolveResult};
pub use pto::{ForwardOp, PtoMap};
