//! Interface analysis for the degenerate fifth-order thin film ODE: exact
//! `m = 1` profiles, periodic oscillatory components with their Floquet
//! multipliers, nonexistence intervals and heteroclinic bifurcation values.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod export;
pub mod identities;
pub mod m1exact;
pub mod odeflow;
pub mod orbits;
pub mod params;
pub mod polyroots;

pub use error::{Error, Result};
