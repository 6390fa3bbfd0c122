//! Conditional Wasserstein GAN for fire arrival-time fields: a small
//! reverse-mode autodiff engine, the U-Net generator and critic, the
//! gradient-penalized losses and the training loop.

pub mod autograd;
pub mod error;
pub mod kernels;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod sampler;
pub mod tensor;
pub mod train;

pub use error::{GanError, Result};
pub use model::{Critic, CriticConfig, CriticNet, Generator, GeneratorConfig};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
pub use train::{load_generator, DataSource, EpochMetrics, TrainConfig, TrainSample, Trainer};
