//! Capture-point walking plans with knee-bend-aware step timing.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod com;
pub mod error;
pub mod feasibility;
pub mod icp;
pub mod model;
pub mod qp;
pub mod timing;
pub mod walk;

pub use error::{Error, Result};
pub use model::*;
