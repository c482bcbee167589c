//! Sequence encoders (token and frame input), embedding-conditioned
//! decoders, and greedy/beam decoding over the fixed-size bottleneck.

mod decoder;
mod encoder;
mod params;
#[cfg(test)]
mod tests;
mod vocab;

pub use decoder::{
    decode_beam, decode_greedy, emission_logprobs, BeamOutput, DecodeOutput,
    EmbeddingConditionedDecoder, UnitDecoder, UNIT_RESERVED,
};
pub use encoder::{FrameEncoder, Pooling, SequenceEncoder};
pub use params::{Params, ParamSlot};
pub use vocab::{Vocabulary, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty input sequence")]
    EmptySequence,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("frame dimension {got} does not match encoder input dimension {expected}")]
    FrameDimMismatch { got: usize, expected: usize },
    #[error("target sequence must start with BOS and end with EOS")]
    MissingBosEos,
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type ModelResult<T> = Result<T, ModelError>;

/// FNV-1a over token/frame bytes; tags embeddings with their input.
pub(crate) fn input_hash(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub(crate) fn hash_tokens(tokens: &[u32]) -> u64 {
    input_hash(tokens.iter().flat_map(|t| t.to_le_bytes()))
}

pub(crate) fn hash_frames(frames: &[Vec<f64>]) -> u64 {
    input_hash(
        frames
            .iter()
            .flat_map(|f| f.iter().flat_map(|v| v.to_le_bytes())),
    )
}
