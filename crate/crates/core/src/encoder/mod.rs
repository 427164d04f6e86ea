//! Toy transformer encoder with rotary positions, per-task LoRA adapters and
//! mean pooling.

mod config;
pub mod lora;
mod model;
pub mod rope;

pub use config::ModelConfig;
pub use lora::{lora_linear, lora_overhead, LoraAdapter, LoraPair};
pub use model::{
    mean_pool, mean_pool_graph, tokenize_texts, Bindings, EncoderModel, ParameterCounts,
    TokenBatch, Trainable, LAYER_NORM_EPS,
};
pub use rope::{apply_rope, apply_rope_at};

use crate::autodiff::TensorError;
use crate::task::TaskKind;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("head dimension {0} is odd; rotary encoding needs pairs")]
    OddHeadDim(usize),
    #[error("adapter factors disagree on rank: A has {0}, B has {1}")]
    RankMismatch(usize, usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model has no adapter for task {0}")]
    MissingAdapter(TaskKind),
    #[error("missing or unexpected parameter {0}")]
    MissingParameter(String),
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("sequence {row} has no unmasked tokens")]
    FullyMasked { row: usize },
    #[error("embedding dimension {0} is not one of the configured truncation sizes")]
    DimNotAllowed(usize),
}
