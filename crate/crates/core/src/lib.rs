//! Discounted optimal control on a junction of half-planes with entry costs.
//!
//! The state space is `N >= 2` closed half-planes glued along a common line
//! (the interface). Each half-plane has its own controls, dynamics and
//! running cost, and a positive cost is paid every time a trajectory leaves
//! the interface into a half-plane. The value function is discontinuous
//! across the interface and is represented by one function per half-plane
//! plus a separate interface value.
//!
//! Modules:
//! - [`geometry`]: junction points and the geodesic metric
//! - [`problem`]: control data and assumption audits
//! - [`hamiltonians`]: `H_i`, `H_i^+`, `H_Γ` over sampled controls
//! - [`solver`]: semi-Lagrangian fixed-point scheme
//! - [`trajectory`]: simulation, cost accounting, feedback policies, brute force
//! - [`oracle`]: closed-form value of the two half-plane example
//! - [`verify`]: post-solve structural checks
//! - [`config`], [`io`], [`pipeline`]: declarative runs and file formats

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod geometry;
pub mod hamiltonians;
pub mod io;
pub mod oracle;
pub mod pipeline;
pub mod problem;
pub mod solver;
pub mod trajectory;
pub mod verify;

pub use geometry::{geodesic_distance, Branch, JunctionGeometry, JunctionPoint};
pub use problem::{ControlSample, HalfPlaneSpec, ProblemSpec};
pub use solver::{sl_update, solve, GridSpec, SolveReport, ValueField};
