//! A small text-conditioned latent diffusion model with its own autodiff:
//! style and glyph conditioning branches, a U-shaped noise predictor,
//! training, checkpoints and deterministic sampling.

pub mod checkpoint;
pub mod data;
pub mod fixture;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod modules;
pub mod params;
pub mod sample;
pub mod schedule;
pub mod tensor;
pub mod train;
pub mod vae;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use graph::{Gradients, Graph, Var};
pub use model::{Model, ModelConfig, ModelError};
pub use params::ParamStore;
pub use sample::sample;
pub use schedule::{q_sample, NoiseSchedule, ScheduleConfig};
pub use tensor::{Scalar, Tensor};
pub use train::{train, TrainConfig, TrainError, TrainOutcome};
