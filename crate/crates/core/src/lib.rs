//! Numerical core for optimal liquidation with regime switching and dark pools.
//!
//! The value of the liquidation problem is `Y^i_t x^2`, where `Y` solves a
//! coupled system of Riccati-type backward equations whose terminal value is
//! `+inf` (the liquidation constraint `X_T = 0`). With deterministic
//! piecewise-constant coefficients the system is a backward ODE system. This
//! crate solves the truncated system `Y(T) = L`, builds the singular solution
//! as the monotone limit `L -> inf`, brackets it with closed-form envelopes,
//! and simulates the optimally controlled position.
//!
//! # Modules
//!
//! - [`model`]: problem data and validation
//! - [`driver`]: the backward-equation driver and its structural estimates
//! - [`grid`]: time grids clustered toward the terminal time
//! - [`truncated`]: RK4 solver for the truncated system, penalization ladders, closed forms
//! - [`singular`]: bound envelope, ladder extrapolation, blow-up diagnostics
//! - [`simulate`]: regime paths, dark-pool fills, closed-loop positions and costs
//! - [`stats`]: order-stable summation and sample statistics
//!
//! The crate is `no_std` and only needs `alloc`.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#![no_std]

extern crate alloc;

pub mod driver;
mod error;
pub mod grid;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod singular;
pub mod stats;
pub mod truncated;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use model::{CoefficientSet, MarkMeasure, MarketModel, RegimeGenerator};
pub use simulate::ValueSurface;
pub use singular::{BoundsEnvelope, SingularSolution};
pub use truncated::{LadderResult, TruncatedSolution};
