//! Compact permutation-invariant vision transformer with its own numerics.

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use data::{DatasetSplit, TaskKind};
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, Pooling};
pub use rng::Rng;
pub use tensor::{Tape, Tensor, Var};
pub use train::{RunRecord, TrainProtocol};
