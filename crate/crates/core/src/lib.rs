//! Cross-city traffic demand transfer with semantic fusion, learned
//! hierarchical clustering and domain-invariant memories.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! and experiment orchestration live in the `sfmgtl` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adversarial;
pub mod autograd;
pub mod datasets;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod fusion;
pub mod hierarchy;
pub mod memory;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod training;
pub mod urban_graphs;

pub use error::{Error, Result};
pub use tensor::Mat;
