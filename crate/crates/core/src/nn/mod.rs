//! From-scratch encoders for tweet classification with reverse-mode
//! differentiation, Adam, and an early-stopping training loop.

pub mod baseline;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod train;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckReport, TensorCheck};
pub use layers::Mode;
pub use model::{Checkpoint, EncodedInstance, EncoderKind, ModelOutput, ModelSpec, Vocab};
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, ParamSet, Tensor};
pub use tape::{Mat, Tape, Var};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence of length {len} is shorter than kernel width {width}")]
    TooShort { len: usize, width: usize },
    #[error("gold class {gold} out of range for {k} logits")]
    ClassOutOfRange { gold: usize, k: usize },
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient in tensor {0:?}")]
    NonFiniteGradient(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (first instance {first_id:?})")]
    NonFiniteLoss { epoch: usize, batch: usize, first_id: String, loss: f64 },
    #[error("empty {0} set")]
    EmptyData(&'static str),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
