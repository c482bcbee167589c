//! Directory-of-checkpoints registry with a JSON index, plus pipeline
//! composition: any registered encoder composes with any registered
//! decoder, and the pair is tagged ZERO_SHOT when training provenance
//! shows they never co-occurred.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{
    decode_greedy, EmbeddingConditionedDecoder, FrameEncoder, ModelError, Pooling,
    SequenceEncoder, UnitDecoder, Vocabulary, UNIT_RESERVED,
};
use crate::train::{
    apply_arrays, load_checkpoint, CheckpointMeta, Modality, ModuleKind, ProvenanceMeta,
    TrainError,
};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown module id {id:?}")]
    UnknownId { id: String },
    #[error("id {id:?} already registered")]
    DuplicateId { id: String },
    #[error("{id:?} is not an encoder")]
    NotAnEncoder { id: String },
    #[error("{id:?} is not a decoder")]
    NotADecoder { id: String },
    #[error("dimension mismatch: encoder {encoder_id} outputs D={enc_d}, decoder {decoder_id} expects D={dec_d}")]
    DimensionMismatch {
        encoder_id: String,
        enc_d: usize,
        decoder_id: String,
        dec_d: usize,
    },
    #[error("pipeline expects {expected} input")]
    WrongInputModality { expected: &'static str },
    #[error("registry index: {0}")]
    Index(#[source] serde_json::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type RegistryResult<T> = Result<T, RegistryError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: String,
    /// Checkpoint path relative to the registry root.
    pub file: String,
    pub kind: ModuleKind,
    pub language: Option<String>,
    pub modality: Modality,
    pub d: usize,
    pub provenance: ProvenanceMeta,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    entries: BTreeMap<String, RegistryEntry>,
}

/// Checkpoint directory + `registry.json` index.
pub struct Registry {
    root: PathBuf,
    index: Index,
}

impl Registry {
    pub fn open_or_create(root: &Path) -> RegistryResult<Self> {
        fs::create_dir_all(root)?;
        let index_path = root.join("registry.json");
        let index = if index_path.exists() {
            serde_json::from_str(&fs::read_to_string(&index_path)?).map_err(RegistryError::Index)?
        } else {
            Index::default()
        };
        Ok(Self {
            root: root.to_path_buf(),
            index,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.index.entries.keys().map(|s| s.as_str())
    }

    pub fn get(&self, id: &str) -> RegistryResult<&RegistryEntry> {
        self.index
            .entries
            .get(id)
            .ok_or_else(|| RegistryError::UnknownId { id: id.to_string() })
    }

    pub fn checkpoint_path(&self, id: &str) -> RegistryResult<PathBuf> {
        Ok(self.root.join(&self.get(id)?.file))
    }

    /// Register a checkpoint already written under the registry root.
    /// Re-registering the same id with identical metadata is idempotent.
    pub fn register(&mut self, meta: &CheckpointMeta, file: &str) -> RegistryResult<()> {
        let entry = RegistryEntry {
            id: meta.id.clone(),
            file: file.to_string(),
            kind: meta.kind,
            language: meta.language.clone(),
            modality: meta.modality,
            d: meta.d,
            provenance: meta.provenance.clone(),
        };
        if let Some(existing) = self.index.entries.get(&meta.id) {
            if existing.file != entry.file {
                return Err(RegistryError::DuplicateId {
                    id: meta.id.clone(),
                });
            }
        }
        self.index.entries.insert(meta.id.clone(), entry);
        self.persist()
    }

    fn persist(&self) -> RegistryResult<()> {
        let json = serde_json::to_string_pretty(&self.index).map_err(RegistryError::Index)?;
        fs::write(self.root.join("registry.json"), json.as_bytes())?;
        Ok(())
    }

    /// Rebuild a model from its checkpoint (float32-exact parameters).
    pub fn load_module(&self, id: &str) -> RegistryResult<LoadedModule> {
        let path = self.checkpoint_path(id)?;
        let (meta, arrays) = load_checkpoint(&path)?;
        LoadedModule::from_checkpoint(&meta, &arrays).map_err(RegistryError::from)
    }
}

pub enum LoadedModule {
    TextEncoder(SequenceEncoder),
    FrameEncoder(FrameEncoder),
    Decoder(EmbeddingConditionedDecoder, ModuleKind),
}

impl LoadedModule {
    pub fn from_checkpoint(meta: &CheckpointMeta, arrays: &[Vec<f32>]) -> Result<Self, TrainError> {
        let vocab = Vocabulary::new(meta.vocab_tokens.iter().cloned())?;
        match meta.kind {
            ModuleKind::Teacher | ModuleKind::TextEncoder => {
                let mut enc = SequenceEncoder::new(
                    &meta.id,
                    vocab,
                    meta.h,
                    meta.d,
                    meta.pooling.unwrap_or(Pooling::Max),
                    meta.seed,
                );
                apply_arrays(&mut enc.params, meta, arrays)?;
                Ok(LoadedModule::TextEncoder(enc))
            }
            ModuleKind::FrameEncoder => {
                let f = meta.f.ok_or(TrainError::Corrupt("frame encoder without F"))?;
                let mut enc = FrameEncoder::new(&meta.id, f, meta.h, meta.d, meta.seed);
                apply_arrays(&mut enc.params, meta, arrays)?;
                Ok(LoadedModule::FrameEncoder(enc))
            }
            ModuleKind::TextDecoder | ModuleKind::UnitDecoder => {
                let mut dec =
                    EmbeddingConditionedDecoder::new(&meta.id, vocab, meta.h, meta.d, meta.seed);
                apply_arrays(&mut dec.params, meta, arrays)?;
                Ok(LoadedModule::Decoder(dec, meta.kind))
            }
        }
    }
}

pub enum EncoderModule {
    Text(SequenceEncoder),
    Frames(FrameEncoder),
}

impl EncoderModule {
    pub fn d(&self) -> usize {
        match self {
            EncoderModule::Text(e) => e.d,
            EncoderModule::Frames(e) => e.d,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            EncoderModule::Text(e) => &e.id,
            EncoderModule::Frames(e) => &e.id,
        }
    }
}

/// A frozen (encoder, decoder) composition.
pub struct Pipeline {
    pub encoder_id: String,
    pub decoder_id: String,
    pub encoder: EncoderModule,
    pub decoder: EmbeddingConditionedDecoder,
    pub decoder_kind: ModuleKind,
    pub src_language: Option<String>,
    pub tgt_language: Option<String>,
    pub input_modality: Modality,
    pub zero_shot: bool,
    pub max_len: usize,
}

pub enum TranslateInput<'a> {
    Tokens(&'a [String]),
    Frames(&'a [Vec<f64>]),
}

/// Output of one translation. Unit decoders emit `units` (normalized, so
/// they feed the vocoder directly); text decoders emit `tokens`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Translation {
    pub tokens: Vec<String>,
    pub units: Option<Vec<u32>>,
    pub truncated: bool,
    pub zero_shot: bool,
    pub decoding: String,
}

/// Compose two registered modules into a pipeline, loading both
/// checkpoints. ZERO_SHOT iff the decoder never consumed this encoder's
/// embeddings during training.
pub fn compose(
    encoder_id: &str,
    decoder_id: &str,
    registry: &Registry,
    max_len: usize,
) -> RegistryResult<Pipeline> {
    let enc_entry = registry.get(encoder_id)?.clone();
    let dec_entry = registry.get(decoder_id)?.clone();
    let encoder = match registry.load_module(encoder_id)? {
        LoadedModule::TextEncoder(e) => EncoderModule::Text(e),
        LoadedModule::FrameEncoder(e) => EncoderModule::Frames(e),
        LoadedModule::Decoder(..) => {
            return Err(RegistryError::NotAnEncoder {
                id: encoder_id.to_string(),
            })
        }
    };
    let (decoder, decoder_kind) = match registry.load_module(decoder_id)? {
        LoadedModule::Decoder(d, kind) => (d, kind),
        _ => {
            return Err(RegistryError::NotADecoder {
                id: decoder_id.to_string(),
            })
        }
    };
    if encoder.d() != decoder.d {
        return Err(RegistryError::DimensionMismatch {
            encoder_id: encoder_id.to_string(),
            enc_d: encoder.d(),
            decoder_id: decoder_id.to_string(),
            dec_d: decoder.d,
        });
    }
    let zero_shot = !dec_entry
        .provenance
        .encoders_seen
        .iter()
        .any(|seen| seen == encoder_id);
    Ok(Pipeline {
        encoder_id: encoder_id.to_string(),
        decoder_id: decoder_id.to_string(),
        encoder,
        decoder,
        decoder_kind,
        src_language: enc_entry.language,
        tgt_language: dec_entry.language,
        input_modality: enc_entry.modality,
        zero_shot,
        max_len,
    })
}

impl Pipeline {
    /// Greedy translation through the fixed-size bottleneck. Unit-decoder
    /// output is duplicate-collapsed (the inference-side normalizer), so
    /// it satisfies the vocoder's precondition.
    pub fn translate(&self, input: TranslateInput<'_>) -> RegistryResult<Translation> {
        let emb = match (&self.encoder, input) {
            (EncoderModule::Text(enc), TranslateInput::Tokens(tokens)) => {
                let ids = enc.vocab.encode(tokens);
                enc.embed_sentence(&ids)?
            }
            (EncoderModule::Frames(enc), TranslateInput::Frames(frames)) => enc.encode(frames)?,
            (EncoderModule::Text(_), _) => {
                return Err(RegistryError::WrongInputModality { expected: "token" })
            }
            (EncoderModule::Frames(_), _) => {
                return Err(RegistryError::WrongInputModality { expected: "frame" })
            }
        };
        let out = decode_greedy(&self.decoder, &emb.values, self.max_len)?;
        let (tokens, units) = match self.decoder_kind {
            ModuleKind::UnitDecoder => {
                let raw: Vec<u32> = out
                    .tokens
                    .iter()
                    .filter(|t| **t >= UNIT_RESERVED as u32)
                    .map(|t| t - UNIT_RESERVED as u32)
                    .collect();
                (Vec::new(), Some(crate::corpus::normalize_units(&raw)))
            }
            _ => (self.decoder.vocab.decode(&out.tokens), None),
        };
        Ok(Translation {
            tokens,
            units,
            truncated: !out.reached_eos,
            zero_shot: self.zero_shot,
            decoding: "greedy".to_string(),
        })
    }
}

/// Decoders built directly in memory can be unit decoders too.
pub fn unit_decoder_output(dec: &UnitDecoder, emb: &[f64], max_len: usize) -> RegistryResult<Vec<u32>> {
    let out = decode_greedy(dec, emb, max_len)?;
    let raw: Vec<u32> = out
        .tokens
        .iter()
        .filter(|t| **t >= UNIT_RESERVED as u32)
        .map(|t| t - UNIT_RESERVED as u32)
        .collect();
    Ok(crate::corpus::normalize_units(&raw))
}
