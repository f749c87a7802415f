//! Wasserstein GAN training of the generator against the CDE
//! discriminator, with gradient penalty, Adadelta, weight averaging and
//! checkpoints.

mod config;
mod loss;
mod model;
mod train;

pub use config::{Regime, TrainConfig, PRESETS};
pub use loss::{discriminator_loss, generator_loss, gradient_penalty, penalty_terms, Discriminator};
pub use model::{generate_normalized, Model, TrainedModel};
pub use train::{prepare_data, train, train_with, Objective, Phase, RealSampler, StepRecord, TrainReport, Trainer};
