//! Core library: diffusion-autoencoder latent encoding, k-means mode
//! discovery, direction extraction, counterfactual generation, and the
//! evaluation metrics, all deterministic under a single 64-bit seed.

pub mod cluster;
pub mod counterfactual;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
