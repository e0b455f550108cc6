//! Lagrangian fixed-point solver for two-dimensional viscous free-surface
//! flow with surface tension.

// NaN must fail the positivity checks, and index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod diagnostics;
pub mod field;
pub mod fixedpoint;
pub mod geometry;
pub mod io_cli;
pub mod lagrangian;
pub mod linear_stokes;
pub mod spectral;

pub use error::{Error, Result};
