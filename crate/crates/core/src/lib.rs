//! Penalty-based first-order methods for bilevel problems whose lower level
//! is constrained and need not have a unique solution.
//!
//! The lower problem `min_y g(x, y)` over a convex set `Y` is folded into the
//! upper objective through the penalized hyper-objective
//! `psi_sigma(x) = (l(x, sigma) - l(x, 0)) / sigma`, with
//! `l(x, sigma) = min_Y sigma f + g`. The [`solver`] module minimizes it
//! through Moreau envelopes of both value functions, [`landscape`] evaluates
//! it and its gradient directly, and [`testbed`] supplies analytic instances.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod landscape;
pub mod oracle;
pub mod problem;
pub mod prox;
pub mod solver;
pub mod testbed;
pub mod trace;
pub mod verify;

pub use domain::{ConvexDomain, Point};
pub use error::{Error, Result};
pub use problem::{BilevelProblem, Objective};
