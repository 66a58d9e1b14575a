//! Time-series classification built around differentiable feature anchors.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod correction;
pub mod data;
pub mod error;
pub mod forest;
pub mod model;
pub mod nn;
pub mod probe;
pub mod sensitivity;
pub mod tensor;
pub mod train;
pub mod tsf;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
