//! Conditional latent diffusion over user embeddings.

mod denoiser;
mod losses;
mod schedule;
mod train;

pub use denoiser::{sinusoidal_embedding, Denoiser, DenoiserShape, GeneratorMeta};
pub use losses::{diffusion_term, dispersive_loss, dispersive_term};
pub use schedule::{forward_noise, noise_with, reverse_step, NoiseSchedule};
pub use train::{
    diffusion_loss, sample_latent, sample_many, total_loss_on_tape, train_generator, ConditionSource,
    DiffusionConfig, FixedCondition, GeneratorEpoch, SampleRequest, TrainedGenerator,
};
