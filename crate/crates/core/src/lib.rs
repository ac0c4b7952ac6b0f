//! Multi-layer linear self-attention as an in-context learner.
//!
//! The crate simulates stacks of linear self-attention layers under the
//! gradient-descent construction, with full, prefix and causal masks, and
//! checks them against weight-space reference dynamics:
//!
//! - [`numerics`]: small dense kernels (triangular solves, Jacobi eigen, min-norm least squares)
//! - [`taskgen`]: seeded synthetic regression tasks
//! - [`model`]: token layout, constructed layers, general and reduced forward passes
//! - [`oracle`]: batch GD, causal per-position GD, stationary points, online GD
//! - [`verify`]: equivalence and convergence checks with JSON reports
//! - [`experiments`]: the sweeps behind the `lsa-lab` command-line tool

pub mod cli;
pub mod experiments;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod taskgen;
pub mod verify;
