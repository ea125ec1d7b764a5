//! Adaptive-penalty finite element solver for the 2D incompressible
//! Navier-Stokes equations.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod assembly;
pub mod driver;
pub mod error;
pub mod fespace;
pub mod linsolve;
pub mod mesh;
pub mod par;
pub mod problems;
pub mod sparse;
pub mod stepper;

pub use error::{Error, Result};
