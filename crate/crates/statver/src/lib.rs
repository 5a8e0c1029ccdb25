//! Closed-loop statistical verification of stochastic systems.
//!
//! Given a budget of stochastic simulations of a parameterized system, this
//! crate builds a Gaussian-process model of a scalar requirement-robustness
//! signal, predicts the probability of requirement satisfaction over a lattice
//! covering the whole parameter space, quantifies prediction confidence via an
//! approximate CDF variance, and actively selects future simulations so that
//! the prediction error shrinks as fast as possible.
//!
//! The pieces compose bottom-up:
//!
//! * [`kernel`] — squared-exponential ARD covariance function.
//! * [`gp`] — GP regression: training, posterior prediction, MLE of the
//!   hyperparameters, and a fast incremental lattice evaluator.
//! * [`verify`] — the satisfaction-probability calculus: predicted and true
//!   `p_sat`, approximate CDF variance, one-sample variance reduction, and the
//!   Chebyshev diagnostic bound.
//! * [`stl`] — a small signal-temporal-logic fragment: parser and quantitative
//!   robustness over sampled trajectories.
//! * [`systems`] — benchmark stochastic systems with recoverable ground truth,
//!   the sampling lattice, and deterministic per-sample seed derivation.
//! * [`sampling`] — acquisition strategies and the sequential closed-loop
//!   driver.
//! * [`dpp`] — k-DPP batch selection and the batch closed-loop driver.
//! * [`trace`] — the per-run record emitted by the drivers.
//! * [`harness`] — config files, paired-seed experiment runner, CSV/JSON
//!   output, and summaries.

pub mod dpp;
mod driver;
pub mod error;
pub mod gp;
pub mod harness;
pub mod kernel;
pub mod sampling;
pub mod stl;
pub mod systems;
pub mod trace;
pub mod verify;

pub use error::Error;

/// Shorthand result type used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
