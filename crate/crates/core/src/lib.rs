//! Impulse control with fee-selected stochastic execution delays.
//!
//! The crate solves the quasi-variational inequality of a mixed
//! continuous/impulse control problem in which each impulse is an order
//! whose execution waits for an exponential delay whose rate is bought
//! through a priority-fee ladder. The CEX-DEX trading model is the
//! concrete instance: continuous trading on a centralized venue, delayed
//! discrete trades on a constant-product pool.
//!
//! - [`control`]: ladders, pending-order configurations, admissibility.
//! - [`cexdex`]: market dynamics, pool cash flows and rewards.
//! - [`grid`]: discretization and the explicit-scheme stability bound.
//! - [`solver`]: backward QVI solver, residual checks, Riccati oracle.
//! - [`policy_tools`]: region and fee maps, ladder sweeps, smooth fit.
//! - [`sim`]: Monte Carlo simulation and policy comparison.
//! - [`config`], [`commands`] and [`artifact`]: declarative runs, the
//!   subcommands of the `pfqvi` binary and the files they write.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod cexdex;
pub mod commands;
pub mod config;
pub mod control;
pub mod error;
pub mod grid;
pub mod policy_tools;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
