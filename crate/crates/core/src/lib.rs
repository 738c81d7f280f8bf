//! Synthetic EEG channel reconstruction with a conditional denoising
//! diffusion model.

pub mod data;
pub mod diffusion;
pub mod dsp;
pub mod nn;
pub mod pipeline;
pub mod error;
pub mod eval;
pub mod gan;
pub mod rng;

pub use error::{Error, Result};
