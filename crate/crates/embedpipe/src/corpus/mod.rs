//! Synthetic parallel data: a template grammar for the pivot language,
//! invertible cipher transforms deriving the other languages, a frame
//! "speech" modality, and discrete-unit extraction.

mod grammar;
mod io;
mod speech;
mod transform;

pub use grammar::{Grammar, LENGTH_BUCKETS};
pub use io::{load_corpus, parse_corpus, save_corpus};
pub use speech::{
    extract_units, normalize_units, FrameSynthesizer, UnitCodebook, FRAME_JITTER_SIGMA,
};
pub use transform::{CompiledLanguage, LanguageSpec, Transform};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::Vocabulary;

pub type LangId = String;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed corpus record: {source}")]
    MalformedLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error("record {id} is missing language {lang}")]
    MissingLanguage { id: u64, lang: LangId },
    #[error("language spec {id} is not invertible: {reason}")]
    NotInvertible { id: LangId, reason: String },
    #[error("frame dimension {got} does not match codebook dimension {expected}")]
    FrameDimMismatch { got: usize, expected: usize },
    #[error("token {token:?} not in vocabulary of {lang}")]
    UnknownToken { token: String, lang: LangId },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type CorpusResult<T> = Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// One aligned record: the same sentence in every declared language, with
/// optional frame sequences and raw unit sequences per language.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: u64,
    pub text: BTreeMap<LangId, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub frames: BTreeMap<LangId, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub units: BTreeMap<LangId, Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub split: Split,
    pub records: Vec<CorpusRecord>,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Token sequences of one language, in record order.
    pub fn sentences(&self, lang: &str) -> CorpusResult<Vec<&Vec<String>>> {
        self.records
            .iter()
            .map(|r| {
                r.text.get(lang).ok_or_else(|| CorpusError::MissingLanguage {
                    id: r.id,
                    lang: lang.to_string(),
                })
            })
            .collect()
    }

    /// Records carrying frames for the given language.
    pub fn speech_records(&self, lang: &str) -> Vec<&CorpusRecord> {
        self.records
            .iter()
            .filter(|r| r.frames.contains_key(lang))
            .collect()
    }
}

/// Generate the base corpus in the pivot language. Deterministic for a
/// given seed; record index i draws from stream i of the seed.
pub fn gen_base_corpus(seed: u64, n: usize, grammar: &Grammar) -> Vec<Vec<String>> {
    (0..n).map(|i| grammar.sentence(seed, i as u64)).collect()
}

/// Derive aligned translations by applying a compiled language transform
/// to every sentence. The inverse transform recovers the source exactly.
pub fn derive_language(
    sentences: &[Vec<String>],
    lang: &transform::CompiledLanguage,
) -> CorpusResult<Vec<Vec<String>>> {
    sentences.iter().map(|s| lang.apply(s)).collect()
}

/// Sentence-count histogram over the BLEU length buckets.
pub fn bucket_histogram(sentences: &[Vec<String>]) -> [usize; 4] {
    let mut h = [0usize; 4];
    for s in sentences {
        h[grammar::bucket_of(s.len())] += 1;
    }
    h
}

/// Vocabulary of the base grammar (pivot language).
pub fn base_vocabulary(grammar: &Grammar) -> Vocabulary {
    Vocabulary::new(grammar.words().map(|w| w.to_string())).unwrap()
}
