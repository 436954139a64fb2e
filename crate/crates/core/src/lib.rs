//! Spatial-temporal generative ConvNet for dynamic textures.
//!
//! An energy-based model over videos whose score is a multi-layer
//! spatial-temporal ConvNet, sampled with Langevin dynamics and learned by
//! analysis by synthesis. Also provides occlusion recovery, background
//! inpainting and a pairwise MRF Gibbs baseline.

pub mod energy;
pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod learner;
pub mod mrf_baseline;
pub mod net;
pub mod recovery;
pub mod rng;
pub mod run;
pub mod sampler;
pub mod tensor;

pub use error::{Error, Result};
