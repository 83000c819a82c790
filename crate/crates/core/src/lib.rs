//! Lifelong language learning with an episodic memory.
//!
//! A single model learns from a stream of examples drawn from several
//! datasets, one after another, without ever seeing which dataset an example
//! came from. An episodic key-value memory stores seen examples; it drives
//! sparse experience replay during training and nearest-neighbour local
//! adaptation at inference time.

pub mod adapt;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod memory;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
