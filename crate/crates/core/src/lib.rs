//! Numerical certification of the Pontryagin maximum principle.
//!
//! A candidate process is tested against finite packets of needle
//! variations. Each packet induces a finite-dimensional problem whose
//! stationarity conditions reduce, through the adjoint equation, to a
//! linear feasibility question over the endpoint multipliers. The
//! [`certify`] module refines packets and either produces a multiplier
//! tuple satisfying the sampled maximum condition or a Farkas-style
//! certificate that none exists.

pub mod certify;
pub mod dual;
pub mod error;
pub mod expr;
pub mod extension;
pub mod integrate;
pub mod lp;
pub mod multipliers;
pub mod needle;
pub mod problem;
pub mod problem_file;
pub mod timefree;

pub use error::{Error, Result};
pub use expr::{parse, Expr, ExprError};
pub use integrate::{Linearization, Reference, TimeGrid, Trajectory};
pub use problem::{CandidateProcess, ControlProblem, EndpointData, PiecewiseControl, TimeMode};
