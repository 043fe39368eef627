//! Minimal CPU autodiff for the small convolutional networks used by `localdom`.
//!
//! The engine is deliberately single-threaded: every reduction runs in a fixed
//! order, so identical seeds and data give bit-identical training trajectories.

mod conv;
mod graph;
mod layers;
mod params;
mod tensor;

pub use conv::ConvGeom;
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use layers::{Bind, Conv2d, GatedConv2d, Linear};
pub use params::{Adam, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("parameter layout mismatch: {0}")]
    ParamMismatch(String),
}
