//! BLEU scoring, length-bucketed analysis, and the deterministic
//! vocoder + transcriber path for speech-output evaluation.

mod bleu;
#[cfg(test)]
mod tests;
mod vocoder;

pub use bleu::{bleu, bleu_by_length, BleuReport, ByLengthReport};
pub use vocoder::{eval_speech_output, vocode, VocoderTable};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("hypothesis/reference count mismatch: {hyps} vs {refs}")]
    CountMismatch { hyps: usize, refs: usize },
    #[error("unknown unit {unit} (vocoder covers {k} units)")]
    UnknownUnit { unit: u32, k: usize },
    #[error("vocoder input must be normalized; consecutive duplicate at position {position}")]
    UnnormalizedUnits { position: usize },
    #[error("vocoder table is not a bijection: {reason}")]
    BadVocoderTable { reason: String },
}

pub type EvalResult<T> = Result<T, EvalError>;
