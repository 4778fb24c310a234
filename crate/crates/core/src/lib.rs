//! flowlab: a numerical laboratory for small-noise stochastic flows of
//! diffeomorphisms.
//!
//! The crate simulates Brownian flows driven by truncated mode expansions,
//! computes the minimal-control-cost rate function attached to them,
//! verifies the Laplace principle by Monte Carlo, and solves a
//! diffeomorphic template-matching problem with its posterior
//! small-noise check.
//!
//! Module map:
//! - [`basis`]: mode families realizing local characteristics `(a, b)`
//! - [`noise`] / [`rng`]: reproducible Brownian driving paths
//! - [`control`]: deterministic controls, controlled flows and their cost
//! - [`flow`]: Euler-Maruyama integration with first-variation tracking
//! - [`metric`]: sampled flow-group distances with inverse-map terms
//! - [`optim`]: discrete-adjoint gradients and the quasi-Newton driver
//! - [`functional`]: the registry of endpoint functionals
//! - [`rate`]: endpoint projections of the rate function
//! - [`ldp`]: Laplace-principle Monte Carlo experiments
//! - [`imaging`]: template transport, matching objective and posterior
//!   checks

pub mod basis;
pub mod control;
pub mod error;
pub mod flow;
pub mod functional;
pub mod geom;
pub mod imaging;
pub mod ldp;
pub mod metric;
pub mod noise;
pub mod optim;
pub mod rate;
pub mod rng;

pub use error::{Error, Result};
