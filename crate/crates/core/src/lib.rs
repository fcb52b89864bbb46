//! Decentralized federated learning simulator and topology inference attacks.
//!
//! The crate simulates nodes that train small MLPs on local data and average
//! parameters with their graph neighbours, then tries to recover that graph
//! from the models alone.

pub mod attacks;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod topology;

pub use error::{Error, Result};
