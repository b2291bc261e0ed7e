// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod nn;
pub mod rng;
pub mod sample_selection;
pub mod style_transfer;
pub mod tensor;

pub use error::{Error, Result};
pub mod trainer;
