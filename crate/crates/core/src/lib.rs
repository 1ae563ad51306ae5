//! Repeated Bertrand pricing games on a discrete price grid.
//!
//! Threat-automaton equilibrium constructions, no-regret defectors, a
//! Monte Carlo and exact game engine, an exact best-response auditor and the
//! bound-verification suites behind the `bertrand` CLI.

pub mod auditor;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod learners;
pub mod strategy;

pub use error::{Error, Result};
