//! A small dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]; computations are recorded on a [`Graph`]
//! through [`Var`] handles and differentiated with [`Graph::backward`].
//! Everything is row-major and contiguous. Kernels are single-threaded
//! with a fixed reduction order, so results are bit-reproducible.

mod element;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod ops;
mod tensor;

pub use element::{gemm, Element};
pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use tensor::{numel, Tensor};
