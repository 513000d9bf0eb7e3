//! Monte-Carlo solver for fully nonlinear Hamilton-Jacobi-Bellman equations
//! via control randomization.
//!
//! The forward pass simulates an Euler discretization of a diffusion whose
//! control argument is replaced by an exogenous pure-jump process on a finite
//! control grid. The backward pass fits, at each time step, a least-squares
//! regression of the continuation value on (state, regime), applies the
//! driver implicitly, and takes the supremum of the fitted map over the
//! control grid. A feedback policy read off the fitted maps is evaluated on
//! independent paths to give a lower bound with a Monte-Carlo error bar, and
//! finite-difference / closed-form references support convergence studies.
//!
//! Modules, bottom-up:
//! - [`rng`]: counter-based per-path random streams (thread-count
//!   independent).
//! - [`exec`]: data-parallel loops over paths, with a sequential fallback
//!   when the `parallel` feature is disabled.
//! - [`model`]: problem definition (coefficients, driver, terminal payoff,
//!   control set), time grids, and built-in benchmark problems.
//! - [`forward`]: regime sampling and Euler simulation into flat path
//!   bundles.
//! - [`regression`]: polynomial least squares per regime slice or jointly in
//!   (state, regime), with conditioning safeguards.
//! - [`scheme`]: the backward dynamic-programming pass.
//! - [`policy`]: feedback-policy extraction and out-of-sample evaluation.
//! - [`oracle`]: finite-difference and closed-form reference values.
//! - [`harness`]: experiment configs, convergence-rate estimation, reports.

pub mod error;
pub mod exec;
pub mod forward;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod regression;
pub mod rng;
pub mod scheme;

pub use error::{Error, Result};
