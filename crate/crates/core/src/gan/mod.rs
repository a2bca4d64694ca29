//! Conditional WGAN-GP with minibatch discrimination.

pub mod config;
pub mod loss;
pub mod model;
pub mod train;

pub use config::{GanConfig, GanGeometry};
pub use loss::{critic_loss, generator_loss, gradient_penalty, CriticLoss};
pub use model::{minibatch_discrimination, Critic, CriticOutput, GanModel, Generator};
pub use train::{generate, pool_origins, sample, train_gan, EpochLog, GanTrainer};
