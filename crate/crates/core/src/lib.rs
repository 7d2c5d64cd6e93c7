//! Placing 3D CAD models into RGB-D scenes: synthetic training data,
//! coarse pose estimation, gravity-constrained alignment and evaluation.

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod boxes3d;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod posenet;
pub mod render;
pub mod rng;
pub mod select;
pub mod synthgen;

pub use error::{Error, Result};
