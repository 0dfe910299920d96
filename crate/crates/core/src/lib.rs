//! Event-driven spiking convolutional-transformer engine.
//!
//! The crate is `no_std` (with `alloc`) so the inference and accounting paths
//! can run on embedded targets; the `std` feature only swaps the float math
//! backend. File formats, EDF parsing and the command-line front end live in
//! the companion `spkf` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
mod math;
pub mod model;
pub mod neuron;
pub mod profile;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, SpikingConformer, Task};
pub use neuron::{ApproxConfig, LifParams, SkipStats};
pub use tensor::Tensor;
