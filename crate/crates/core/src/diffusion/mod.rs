//! Conditional denoising diffusion for single-channel reconstruction.

mod ddpm;
mod schedule;
mod unet;

pub use ddpm::{
    ddpm_sample, ddpm_sample_batch, select_items, ddpm_train_step, gather_channels, reconstruct_channels,
    train_ddpm, DdpmTrainConfig, NoisePredictor, ReconstructionJob, SamplingVariant, TrainHistory,
};
pub use schedule::{build_schedule, forward_diffuse_closed, forward_diffuse_step, NoiseSchedule};
pub use unet::{ConditionalUnet, UnetConfig};

#[cfg(test)]
mod tests;
