//! Similarity-based knowledge distillation for lightweight vessel
//! segmentation, with a synthetic angiogram generator for testing.

pub mod error;
pub mod distill;
pub mod eval;
pub mod nets;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
