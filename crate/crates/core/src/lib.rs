//! Numerical homogenization of periodic incompressible hyperelastic
//! composites.
//!
//! The crate estimates the homogenized energy density of a two-phase periodic
//! material under the constraint `det F = 1` by solving discretized
//! multi-cell problems, builds composition-based recovery sequences, and
//! probes the structural properties of the homogenized density numerically.

pub mod cell;
pub mod check;
pub mod config;
pub mod density;
pub mod error;
pub mod homog;
pub mod par;
pub mod solve;
pub mod oracle;
pub mod recovery;
pub mod run;
pub mod tensor;

pub use error::{Error, Result};
