//! From-scratch tensor core, layer zoo, and the 10-layer 1D CNN with
//! hand-written forward and backward passes.

pub mod layers;
pub mod loss;
pub mod model;
mod par;
pub mod tensor;

pub use model::{Model, ModelSpec, Mode};
pub use tensor::Tensor;
