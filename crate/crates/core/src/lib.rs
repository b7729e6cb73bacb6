#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

//! Simulation and statistical checks for stochastic functional differential
//! equations
//!
//! ```text
//! dX(t) = B(t, X_t) dt + sigma(t, X(t)) dW(t),   X_0 = x in C([-r, 0], R^d)
//! ```
//!
//! with singular, path-dependent drift. Paths are produced by explicit
//! Euler-Maruyama ([`solver`]) or as reweighted driftless paths
//! ([`girsanov`]); [`zvonkin`] solves the one-dimensional backward equation
//! behind the drift-removing change of variables, and [`analysis`] turns the
//! continuity, stability and moment statements into Monte Carlo probes.

pub mod analysis;
pub mod error;
pub mod functionals;
pub mod girsanov;
pub mod models;
pub mod paths;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod stats;
pub mod zvonkin;

pub use error::{Error, Result};
pub use functionals::Functional;
pub use girsanov::{EstimatorReport, WeightedSample};
pub use models::{DiffusionField, Drift, ModelSpec};
pub use paths::{PathSegment, SamplePath, Segment, TimeGrid};
pub use rng::BrownianDriver;
pub use solver::{CoupledPair, SolverConfig};
