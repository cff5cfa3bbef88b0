//! A compact reverse-mode automatic differentiation engine for small
//! convolutional networks on the CPU.
//!
//! Everything is single threaded with a fixed reduction order, so two runs
//! over identical inputs produce bit-identical values and gradients. The
//! engine is generic over `f32` and `f64` through [`Float`].
//!
//! A [`Graph`] can also run in *symbolic* mode, where tensors carry shapes
//! only. Network forward passes executed symbolically accumulate an exact
//! operation count, which is how complexity accounting is done.

mod conv;
mod error;
mod graph;
pub mod optim;
mod scalar;
mod tensor;

pub use conv::Conv2dCfg;
pub use error::EngineError;
pub use graph::{Gradients, Graph, Var};
pub use scalar::{DType, Float};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, EngineError>;
