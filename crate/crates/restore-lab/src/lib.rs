//! Multi-scale image restoration lab.
//!
//! A compact encoder-decoder restoration network that mixes spatial and
//! frequency-domain feature selection, together with synthetic degradation
//! data, training and evaluation tooling, and a verification suite
//! (invariants, independent oracles, finite-difference gradient checks).

pub mod ablate;
pub mod blocks;
pub mod eval;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod graph;
pub mod layers;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod trainer;
pub mod verify;

pub use graph::{Graph, Tensor, Var};
