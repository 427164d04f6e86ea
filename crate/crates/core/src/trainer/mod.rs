//! Three-stage training: masked-language-model pre-training, pair
//! fine-tuning of the base weights, then per-task adapter training with the
//! base frozen.

mod checkpoint;
mod optim;
mod plan;
mod stages;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, sidecar_path, write_checkpoint, Checkpoint,
    CheckpointError, Sidecar, MAGIC, VERSION,
};
pub use optim::{adamw_update, AdamW, Moments, OptimizerState};
pub use plan::{lr_schedule, MrlSettings, Phase, Stage, StagePlan};
pub use stages::{
    mlm_accuracy, run_stage1, run_stage2, run_stage3, AdapterData, StageReport, DIVERGENCE_LIMIT,
};

use crate::autodiff::TensorError;
use crate::data::DataError;
use crate::encoder::EncoderError;
use crate::objectives::LossError;
use crate::task::TaskKind;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid stage plan: {0}")]
    Plan(String),
    #[error("stage {required} requires a model that completed stage {needed}; this one completed stage {found}")]
    StageOrder { required: u8, needed: u8, found: u8 },
    #[error("parameter {0} received a gradient but is frozen in this stage")]
    FrozenGradient(String),
    #[error("base weights changed during adapter training for {0}")]
    BaseDrift(TaskKind),
    #[error("training diverged at step {step}: loss {loss:e} exceeds the limit")]
    Diverged { step: usize, loss: f64 },
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: String },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Encoder(EncoderError::Tensor(e))
    }
}

fn is_numeric_tensor(e: &TensorError) -> bool {
    matches!(
        e,
        TensorError::NonFinite(_)
            | TensorError::DivisionByZero
            | TensorError::LogNonPositive
            | TensorError::ZeroNorm { .. }
    )
}

impl TrainError {
    /// NaN, infinities and divergence, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            TrainError::Diverged { .. } | TrainError::NonFinite { .. } => true,
            TrainError::Encoder(EncoderError::Tensor(t)) => is_numeric_tensor(t),
            TrainError::Loss(LossError::Tensor(t)) => is_numeric_tensor(t),
            _ => false,
        }
    }
}
