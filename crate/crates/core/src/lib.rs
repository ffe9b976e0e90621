//! Deterministic simulator and analysis toolkit for client-level
//! differentially private federated averaging on least-squares tasks.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN.

pub mod analysis;
pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod math;
pub mod mechanism;

pub use error::{Error, Result};
