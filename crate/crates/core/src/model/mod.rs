//! Byte-level encoder–decoder transformer with named, adapter-addressable
//! weights.

mod beam;
mod checkpoint;
mod config;
mod infer;
mod transformer;
pub mod vocab;

pub use beam::{beam_decode, greedy_decode, Hypothesis, StepDecoder};
pub use checkpoint::{load_model, read_model, save_model, write_model, ModelHeader, BMDL_MAGIC, BMDL_VERSION};
pub use config::ModelConfig;
pub use infer::{DecoderState, InferenceModel};
pub use transformer::{Bindings, EncodedBatch, GradMode, Seq2SeqModel};

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lora::LoraError;
use crate::tensor::{Tensor, TensorError};
use crate::ContainerError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds max_sequence_length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty {0} sequence")]
    EmptySequence(&'static str),
    #[error("unknown weight {0:?}")]
    UnknownWeight(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Lora(#[from] LoraError),
    #[error("checkpoint: {0}")]
    Format(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Weight tensors addressed by hierarchical name (`"enc.0.attn.q"`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NamedWeights {
    map: BTreeMap<String, Tensor>,
}

impl NamedWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.map.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map.get(name).ok_or_else(|| ModelError::UnknownWeight(name.to_string()))
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map
            .get_mut(name)
            .ok_or_else(|| ModelError::UnknownWeight(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.map {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &s in t.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
