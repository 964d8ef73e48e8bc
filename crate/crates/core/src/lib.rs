pub mod data;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod persist;
pub mod seed;
pub mod tensor;
pub mod training;

pub use tensor::{Real, Tensor, TensorError};
