//! Hierarchical image classification: a small CNN stack with reverse-mode
//! differentiation, a two-level label taxonomy, the iterative type → item
//! transfer-learning loop, a flat baseline and their evaluation.

// `!(x > y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use model::{BackboneSpec, HeadSpec, Model};
pub use tensor::Tensor;
