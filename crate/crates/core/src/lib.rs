//! Risk-aware safety filtering for an automated vehicle sharing the road
//! with a crossing pedestrian.
//!
//! Noisy obstacle readings from several sensors are fused into their
//! 2-Wasserstein barycenter, the barrier constraint is sampled from the
//! fused and ego-position distributions, and a QP picks the input closest to
//! the nominal MPC command whose sampled constraint has nonnegative CVaR.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command line
//! live in the `wbcvar` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod control;
pub mod dynamics;
pub mod error;
pub mod geom;
pub mod qp;
pub mod risk;
pub mod rng;
pub mod sensing;
pub mod sim;
pub mod wasserstein;

pub use error::CoreError;
/// Matrix types used in the QP interface.
pub use nalgebra;
