//! Chance-constrained covariance steering for discrete-time linear systems
//! with multiplicative noise.
//!
//! The planner relaxes the exact moment dynamics into a semidefinite
//! program, recovers an affine feedback policy `u = L(x − x̄) + c`, and
//! certifies it against the exact closed-loop moments. A seeded Monte Carlo
//! harness validates the result on the stochastic system itself.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common double-precision case.

// `!(x > 0)` forms are deliberate: they reject NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod montecarlo;
pub mod reference;
pub mod scalar;
pub mod sdp;
pub mod solver;
pub mod tighten;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SystemModel = model::SystemModel<f64>;
pub type ProblemInstance = model::ProblemInstance<f64>;
pub type Policy = moments::Policy<f64>;
pub type MomentTrajectory = moments::MomentTrajectory<f64>;
pub type LinearizationSchedule = tighten::LinearizationSchedule<f64>;
pub type ConicProgram = sdp::ConicProgram<f64>;
pub type RelaxedSolution = sdp::RelaxedSolution<f64>;
pub type Certificate = sdp::Certificate<f64>;
pub type PlanResult = sdp::PlanResult<f64>;
pub type EnsembleStats = montecarlo::EnsembleStats;

pub type SystemModelF32 = model::SystemModel<f32>;
pub type ProblemInstanceF32 = model::ProblemInstance<f32>;
pub type PolicyF32 = moments::Policy<f32>;
