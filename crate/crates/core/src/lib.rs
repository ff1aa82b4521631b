//! Robust controllers for excitation transfer in XX spin networks under
//! dephasing.

// NaN must fail range checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controllers;
pub mod dephasing;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod network;
pub mod optimize;
pub mod robustness;
pub mod seed;
pub mod spectral;

pub use error::{Error, Result};
