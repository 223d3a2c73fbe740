//! Map-assisted multi-dimensional constellation design for short-range
//! line-of-sight mmWave links that combine wavelength-division multiplexing
//! with orbital-angular-momentum (OAM) multiplexing.
//!
//! The crate is organised bottom-up:
//!
//! * [`beam_channel`] evaluates Laguerre-Gaussian link gains, builds the
//!   diagonal per-sub-channel channel matrix for a receiver position and
//!   exposes the gain-ratio quantities used to reason about which positions
//!   share a constellation.
//! * [`convex_core`] solves the convex inner problem of the successive convex
//!   approximation (max-min of affine forms over a power ball or per-group
//!   power caps) with a primal-dual interior-point method.
//! * [`constellation`] holds the minimum-Euclidean-distance (MED) machinery
//!   and the SCA designers for the total-power and fixed-power problems.
//! * [`mapgen`] grids the `(beta, z)` half-plane, designs per-position optima
//!   and clusters them into a constellation map.
//! * [`analysis`] numerically checks the two MED-difference bounds, every
//!   step of their proofs, and runs Monte-Carlo symbol-error simulations.

pub mod analysis;
pub mod beam_channel;
pub mod constellation;
pub mod convex_core;
mod error;
pub mod mapgen;
pub(crate) mod seed;
pub mod textfmt;

pub use error::{Error, Result};
