//! Chance-constrained exploration for Gaussian-policy actor-critic learning on
//! discrete-time plants with bounded model error.
//!
//! The [`governor::Governor`] chooses each step between sampling a Gaussian
//! input whose spread is capped by [`chance::sigma_lower`], applying no input,
//! or replaying a backup sequence that returns the nominal state to a safe
//! target. [`campaign`] wires it to a plant, the learner and CSV output.

// NaN-rejecting guards read as `!(x > 0.0)`
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod chance;
pub mod config;
pub mod constraints;
pub mod episode;
pub mod error;
pub mod governor;
pub mod learner;
mod linalg;
pub mod markov;
pub mod model;
pub mod plant;
pub mod policy;

pub use error::{Error, Result};
