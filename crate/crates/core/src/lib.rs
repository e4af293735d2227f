//! Joint NOMA power allocation and radiation optimization for a downlink
//! pinching-antenna system.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] builds the layout and the line-of-sight channel matrix;
//! * [`power_model`] maps radiated power fractions to coupling coefficients
//!   and antenna spacings;
//! * [`noma`] evaluates SIC rates and the closed-form power split;
//! * [`sca`] optimizes the radiation vector by successive convex
//!   approximation on top of the [`barrier`] interior-point solver;
//! * [`ao`] alternates the two subproblems;
//! * [`baselines`] implements the equal-radiation benchmark;
//! * [`oracle`] holds brute-force references;
//! * [`harness`] runs the Monte Carlo experiments and writes CSV and SVG.

pub mod ao;
pub mod barrier;
pub mod baselines;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod noma;
pub mod oracle;
pub mod power_model;
pub mod sca;

pub use error::{Error, Result};
