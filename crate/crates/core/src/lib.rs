//! Weak optimal transport, weak dependence and concentration checks.
//!
//! The crate works on finite spaces (exact solvers) and on simulated time
//! series (Monte-Carlo verifiers):
//!
//! * [`measures`] — finite spaces, metrics, path laws, relative entropy;
//! * [`transport`] — classical and weak transport costs with certificates;
//! * [`dependence`] — coupling-coefficient matrices and their norms;
//! * [`processes`] — simulators for dependent processes with shared noise;
//! * [`concentration`] — exponential and variance inequalities;
//! * [`oracle`] — least squares and risk bounds under dependence;
//! * [`report`] — structured results consumed by the command line tool.

pub mod concentration;
pub mod dependence;
pub mod error;
pub mod measures;
pub mod oracle;
pub mod processes;
pub mod report;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
