//! Spiking encoder-decoder network engine for event-based semantic
//! segmentation: tensor autograd, adaptive-threshold spiking neurons, event
//! stacking, architecture search, training, and operation/energy accounting.

pub mod error;
pub mod eval;
pub mod events;
pub mod io;
pub mod network;
pub mod search;
pub mod neuron;
pub mod testkit;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{backward, Elem, NoGradGuard, Param, Tensor};
