//! Std companion of `liquidation-core`: JSON model configs, CSV/JSON
//! artifacts, parallel Monte Carlo verification and the `liqlab` pipelines.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
mod error;
pub mod families;
pub mod io;
pub mod montecarlo;

pub use error::{LabError, Result};
