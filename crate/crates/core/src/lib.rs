//! Hybrid classical-quantum models built from a frozen classical feature
//! block and a trainable variational circuit head, on a statevector simulator.

pub mod data;
pub mod encoding;
pub mod error;
pub mod features;
pub mod noise;
pub mod rng;
pub mod sim;
pub mod theory;
pub mod training;
pub mod vqc;

pub use data::Dataset;
pub use error::{Error, Result};
pub use sim::{Gate, StateVector};
