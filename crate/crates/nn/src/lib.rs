//! Reverse-mode automatic differentiation for small 2D convolutional networks.
//!
//! A [`Graph`] records tensor operations as they run and replays them in
//! reverse to produce gradients. Weights live in a [`ParamStore`] and are
//! bound into a fresh graph for every step through a [`Binding`].

pub mod archive;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use archive::Archive;
pub use graph::{Grads, Graph, Var};
pub use layers::{BatchNorm, Conv2d, LayerNorm};
pub use optim::{Adam, AdamConfig};
pub use params::{Binding, ParamStore};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Store32 = ParamStore<f32>;
