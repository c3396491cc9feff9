//! Action-chunking transformer policy for viewpoint planning.
//!
//! Everything is generic over [`Real`]; training and inference run in `f32`
//! and the gradient check in `f64`.

pub mod checkpoint;
pub mod controller;
pub mod error;
pub mod loss;
pub mod model;
pub mod params;
pub mod real;
pub mod tape;
pub mod train;

pub use checkpoint::{infer_chunk, Checkpoint};
pub use controller::{ensemble_action, evaluate, run_episode, EnsembleBuffer};
pub use error::{PolicyError, Result};
pub use model::{Act, ModelConfig, PolicyInput};
pub use real::Real;
pub use train::{train, TrainConfig};

pub type ActModel = model::Act<f32>;
pub type ActModel64 = model::Act<f64>;
