//! Self-triggered sparse feedback control for continuous-time LTI systems.
//!
//! The crate designs sequences of sparse feedback gains together with the
//! dwell times between state samples, so that the closed loop stays stable
//! and the quadratic running cost exceeds the infinite-horizon benchmark
//! cost by at most a chosen factor. The main entry points are:
//!
//! * [`plant::LtiSystem`] / [`plant::generate_network`] — plant models and
//!   the spatially distributed random network generator,
//! * [`plant::build_benchmark`] — the benchmark gain and its Lyapunov
//!   certificate,
//! * [`tables::build_table`] — grid-sampled matrix-exponential integrals
//!   used by every online step,
//! * [`trigger::inter_exec`] — dwell-time maximization for a fixed gain,
//! * [`gain::feedback_gain`] — the l1-penalized gain program,
//! * [`engine::run_algorithm`] — the full three-step loop with cost
//!   accounting and sparsity metrics.

pub mod error;
pub mod linalg;
pub mod plant;
pub mod tables;
pub mod trigger;
pub mod gain;
pub mod engine;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
