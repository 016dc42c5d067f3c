//! Prototype-guided video dataset distillation on a synthetic latent world.

pub mod clustering;
pub mod compose;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod latent;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod world;

pub use error::{GvdError, Result};
pub use latent::{LatentVideo, NoisePrediction};
