//! Fifth-order Boussinesq system on a bounded interval: discretization, time
//! stepping, energy diagnostics and the spectral root analysis.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod config;
pub mod diagnostics;
pub mod discretization;
pub mod error;
pub mod initial;
pub mod io;
pub mod model;
pub mod spectral;
pub mod state;
pub mod timestepper;

pub use error::{Error, Result};
