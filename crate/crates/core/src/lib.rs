//! Numerical laboratory for inner Riesz potential theory.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod mc;
pub mod potential_ops;
pub mod qp;
pub mod thinness;

pub use error::{LabError, Result};
