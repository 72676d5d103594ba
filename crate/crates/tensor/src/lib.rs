//! Minimal CPU tensor engine: dense tensors, a reverse-mode autodiff tape,
//! the convolutional building blocks needed by small encoder-decoder and
//! critic networks, and Adam.

mod conv;
mod graph;
mod optim;
mod real;
mod sampler;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig, ParamSet};
pub use real::{gemm, MatRef, Real};
pub use sampler::{Sampler, Tap};
pub use tensor::Tensor;
