//! Spiking neural network training with a spatial-temporal regulariser and
//! softmax-cutoff anytime inference.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod inference;
pub mod objective;
pub mod snn;
pub mod train;

pub use autodiff::{Tape, Tensor, Var};
pub use error::{parse_toml, Error, Result};
