//! Desk-scale decoder with LoRA adapters on the attention projections.
//!
//! The backbone (embeddings, norms, attention base weights, MLP) is frozen
//! at construction. Only the adapter factors and the two classification
//! heads are trainable.

mod config;
mod lora;
mod params;
mod transformer;

pub use config::{trainable_param_count, LoraConfig, ModelConfig, Pooling, Projection, N_PATHOLOGIES};
pub use lora::{LoraAdapter, LORA_A_INIT_STD};
pub use params::{Param, ParamId, ParamStore};
pub use transformer::{ForwardOutput, LayerAttention, ModelState, RecordedForward, BOS_ID};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Shape(#[from] NumericsError),
    #[error("token sequence is empty")]
    EmptyInput,
    #[error("token sequence must start with the begin-of-sequence id, found {found}")]
    MissingBos { found: u32 },
    #[error("token id {id} at position {position} is outside the vocabulary")]
    UnknownToken { position: usize, id: u32 },
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
}
