//! Dense tensors and tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records each op together with its forward value; a single
//! [`Graph::backward`] call from a scalar produces [`Grads`]. Parameters live
//! in a [`ParamStore`] and are bound into a graph by name, so one store can
//! back any number of independent forward passes.

mod backward;
mod check;
mod error;
mod float;
mod graph;
mod optim;
mod params;
mod rng;
mod schedule;
mod shape;
mod tensor;

pub use backward::Grads;
pub use check::{gradcheck, GradCheck};
pub use error::{Result, TensorError};
pub use float::Float;
pub use graph::{Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::ParamStore;
pub use rng::{stream_rng, Stream};
pub use schedule::cosine_lr;
pub use tensor::{numel, Tensor};

pub use rand_chacha::ChaCha8Rng;
