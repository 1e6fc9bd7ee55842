//! Probabilistic quantum clustering.
//!
//! Points are smoothed into a kernel density ψ, whose Schrödinger potential V
//! has a local minimum at every cluster. Replicas of the observations are
//! descended down V, grouped into wells, and wells separated by a low energy
//! barrier are merged. The resulting clusters carry a full probabilistic
//! model: joint, prior, posterior and likelihood.

pub mod cli;
pub mod dataio;
pub mod descent;
pub mod error;
pub mod graphalloc;
pub mod kernel;
pub mod matrix;
pub mod potential;
pub mod pipeline;
pub mod probmodel;
pub mod scoring;

pub use error::{Error, Result};
pub use matrix::Matrix;
