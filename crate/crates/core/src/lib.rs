// `!(x > 0.0)` is kept on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod format;
pub mod geometry;
pub mod percept;
pub mod pipeline;
pub mod policy;
pub mod projection;
pub mod sim;

pub use error::{Error, Result};
