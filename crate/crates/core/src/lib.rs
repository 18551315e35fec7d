//! Spring-mass particle dynamics guided by a learned, action-conditioned
//! equivariant graph network, with sampling-based push planning.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod action;
pub mod egnn;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod physics;
pub mod planner;
pub mod types;
pub mod worlds;

pub use error::{Error, Result};
