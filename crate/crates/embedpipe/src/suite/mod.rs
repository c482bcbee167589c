//! End-to-end experiment orchestration: dependency-ordered training of
//! every module, checkpointing + registry bookkeeping, composition
//! evaluations, and the consolidated (byte-deterministic) report.

mod report;

pub use report::{
    ByLengthSummary, DecoderMetrics, PairReport, SeedReport, StudentMetrics, SuiteReport,
    TeacherSection, PAIR_CSV_HEADER,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::corpus::{normalize_units, CorpusError, LangId, ParallelCorpus, Split};
use crate::dataset::{
    build_dataset, build_vocoder_table, load_dataset, save_dataset, DataSet, DatasetError,
};
use crate::eval::{bleu, bleu_by_length, eval_speech_output, EvalError, VocoderTable};
use crate::models::{
    EmbeddingConditionedDecoder, FrameEncoder, ModelError, Pooling, SequenceEncoder,
};
use crate::registry::{compose, Pipeline, Registry, RegistryError, TranslateInput};
use crate::space::{distance_report, DistanceReport, NoiseSpec, SentenceEmbedding, SpaceError};
use crate::train::{
    ce_finetune_student, pretrain_teacher, save_checkpoint, train_decoder, train_speech_student,
    train_student, train_unit_decoder, write_curve_csv, AlignedText, CheckpointMeta,
    DecoderObjective, DistillLoss, Modality, ModuleKind, ProvenanceMeta, SpeechData, TeacherMode,
    TrainError, TrainOutcome, UnitData, UnitSource,
};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("suite: {0}")]
    Other(String),
}

pub type SuiteResult<T> = Result<T, SuiteError>;

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn checkpoints_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

pub fn curves_dir(out: &Path) -> PathBuf {
    out.join("curves")
}

pub fn reports_dir(out: &Path) -> PathBuf {
    out.join("reports")
}

/// Generate the dataset if absent, else reload and verify its hash.
pub fn gen_or_load_data(cfg: &ExperimentConfig, out: &Path) -> SuiteResult<DataSet> {
    let dir = data_dir(out);
    if dir.join("meta.json").exists() {
        return Ok(load_dataset(cfg, &dir)?);
    }
    let ds = build_dataset(cfg)?;
    save_dataset(&ds, &dir)?;
    Ok(ds)
}

fn sentences_of(corpus: &ParallelCorpus, lang: &str, limit: usize) -> Vec<Vec<String>> {
    corpus
        .records
        .iter()
        .take(limit)
        .map(|r| r.text[lang].clone())
        .collect()
}

fn speech_data_of(corpus: &ParallelCorpus, lang: &str, pivot: &str) -> SpeechData {
    let records = corpus.speech_records(lang);
    SpeechData {
        frames: records.iter().map(|r| r.frames[lang].clone()).collect(),
        transcripts: records.iter().map(|r| r.text[lang].clone()).collect(),
        translations: records.iter().map(|r| r.text[pivot].clone()).collect(),
    }
}

/// Everything a finished training hands to the registry.
pub struct TrainedModule {
    pub meta: CheckpointMeta,
    pub file: String,
    pub outcome: TrainOutcome,
}

struct SaveSpec<'a> {
    id: &'a str,
    kind: ModuleKind,
    language: Option<&'a str>,
    modality: Modality,
    seed: u64,
    provenance: ProvenanceMeta,
}

/// Common experiment context: config, dataset, derived hashes and paths.
pub struct SuiteCtx {
    pub cfg: ExperimentConfig,
    pub ds: DataSet,
    pub out: PathBuf,
    pub config_hash: String,
    pub pivot: LangId,
}

impl SuiteCtx {
    pub fn new(cfg: ExperimentConfig, out: &Path) -> SuiteResult<Self> {
        cfg.validate()?;
        let ds = gen_or_load_data(&cfg, out)?;
        let config_hash = cfg.hash();
        let pivot = cfg.languages[0].spec.id.clone();
        Ok(Self {
            cfg,
            ds,
            out: out.to_path_buf(),
            config_hash,
            pivot,
        })
    }

    fn save_module(
        &self,
        spec: SaveSpec<'_>,
        params: &crate::models::Params,
        vocab_tokens: Vec<String>,
        vocab_hash: String,
        dims: (usize, usize, Option<usize>),
        pooling: Option<Pooling>,
        outcome: TrainOutcome,
    ) -> SuiteResult<TrainedModule> {
        let (d, h, f) = dims;
        let mut meta = CheckpointMeta {
            format: String::new(),
            id: spec.id.to_string(),
            kind: spec.kind,
            language: spec.language.map(|s| s.to_string()),
            modality: spec.modality,
            d,
            h,
            f,
            pooling,
            vocab_tokens,
            vocab_hash,
            seed: spec.seed,
            config_hash: self.config_hash.clone(),
            corpus_hash: self.ds.corpus_hash.clone(),
            provenance: spec.provenance,
            metrics: outcome.final_metrics.clone(),
            arrays: Vec::new(),
            payload_sha256: String::new(),
        };
        let file = format!("{}.ckpt", spec.id);
        save_checkpoint(&checkpoints_dir(&self.out).join(&file), &mut meta, params)?;
        write_curve_csv(
            &curves_dir(&self.out).join(format!("{}.csv", spec.id)),
            &outcome.curve,
        )?;
        Ok(TrainedModule {
            meta,
            file,
            outcome,
        })
    }

    /// Pretrain the pivot teacher (joint auto-encoder) and keep both
    /// halves: the frozen teacher encoder and the "original decoder".
    pub fn build_teacher(&self) -> SuiteResult<(SequenceEncoder, Vec<TrainedModule>)> {
        let cfg = &self.cfg;
        let vocab = self.ds.vocabs[&self.pivot].clone();
        let mut encoder = SequenceEncoder::new(
            "teacher",
            vocab.clone(),
            cfg.dims.h,
            cfg.dims.d,
            Pooling::Max,
            cfg.teacher_seed,
        );
        let mut decoder = EmbeddingConditionedDecoder::new(
            "dec-original",
            vocab,
            cfg.dims.h,
            cfg.dims.d,
            cfg.teacher_seed ^ 0xDEC0,
        );
        let train = sentences_of(&self.ds.train, &self.pivot, usize::MAX);
        let valid = sentences_of(&self.ds.valid, &self.pivot, usize::MAX);
        let outcome = pretrain_teacher(
            &train,
            &valid,
            &mut encoder,
            &mut decoder,
            &cfg.train.teacher.to_train_config(cfg.teacher_seed),
        )?;

        let enc_module = self.save_module(
            SaveSpec {
                id: "teacher",
                kind: ModuleKind::Teacher,
                language: Some(&self.pivot),
                modality: Modality::Text,
                seed: cfg.teacher_seed,
                provenance: ProvenanceMeta {
                    encoders_seen: vec![],
                    languages_seen: vec![self.pivot.clone()],
                    input_kinds: vec!["text".into()],
                    target_kinds: vec![format!("text:{}", self.pivot)],
                    training_method: "pretrain_autoencode".into(),
                },
            },
            &encoder.params,
            encoder.vocab.content_tokens().map(String::from).collect(),
            encoder.vocab.hash(),
            (cfg.dims.d, cfg.dims.h, None),
            Some(Pooling::Max),
            outcome.clone(),
        )?;
        let dec_module = self.save_module(
            SaveSpec {
                id: "dec-original",
                kind: ModuleKind::TextDecoder,
                language: Some(&self.pivot),
                modality: Modality::Text,
                seed: cfg.teacher_seed ^ 0xDEC0,
                provenance: ProvenanceMeta {
                    encoders_seen: vec!["teacher".into()],
                    languages_seen: vec![self.pivot.clone()],
                    input_kinds: vec!["embedding".into()],
                    target_kinds: vec![format!("text:{}", self.pivot)],
                    training_method: "pretrain_autoencode".into(),
                },
            },
            &decoder.params,
            decoder.vocab.content_tokens().map(String::from).collect(),
            decoder.vocab.hash(),
            (cfg.dims.d, cfg.dims.h, None),
            None,
            outcome,
        )?;
        Ok((encoder, vec![enc_module, dec_module]))
    }

    /// Bitext pairs for a student language: first `budget` train records.
    fn student_pairs(&self, lang: &str) -> SuiteResult<(AlignedText, AlignedText)> {
        let budget = self.cfg.language(lang)?.bitext_budget;
        let take = budget.min(self.ds.train.len());
        let train = AlignedText {
            src: sentences_of(&self.ds.train, lang, take),
            tgt: sentences_of(&self.ds.train, &self.pivot, take),
        };
        let valid = AlignedText {
            src: sentences_of(&self.ds.valid, lang, usize::MAX),
            tgt: sentences_of(&self.ds.valid, &self.pivot, usize::MAX),
        };
        Ok((train, valid))
    }

    pub fn student_seed(&self, lang: &str, seed: u64) -> u64 {
        seed ^ crate::dataset::fnv_str(lang)
    }

    /// Distill a text student for `lang` toward the frozen teacher.
    pub fn train_text_student(
        &self,
        teacher: &SequenceEncoder,
        lang: &str,
        loss: DistillLoss,
        pooling: Pooling,
        seed: u64,
    ) -> SuiteResult<(SequenceEncoder, TrainedModule)> {
        let id = format!("enc-{lang}-s{seed}");
        let mut student = SequenceEncoder::new(
            &id,
            self.ds.vocabs[lang].clone(),
            self.cfg.dims.h,
            self.cfg.dims.d,
            pooling,
            self.student_seed(lang, seed),
        );
        let (train, valid) = self.student_pairs(lang)?;
        let outcome = train_student(
            teacher,
            &train,
            &valid,
            loss,
            &mut student,
            &self.cfg.train.student.to_train_config(seed),
        )?;
        let method = match loss {
            DistillLoss::Mse => "distill_mse",
            DistillLoss::Cosine => "distill_cosine",
        };
        let module = self.save_module(
            SaveSpec {
                id: &id,
                kind: ModuleKind::TextEncoder,
                language: Some(lang),
                modality: Modality::Text,
                seed: self.student_seed(lang, seed),
                provenance: ProvenanceMeta {
                    encoders_seen: vec!["teacher".into()],
                    languages_seen: vec![lang.to_string(), self.pivot.clone()],
                    input_kinds: vec!["text".into()],
                    target_kinds: vec![format!("embedding:{method}")],
                    training_method: method.into(),
                },
            },
            &student.params,
            student.vocab.content_tokens().map(String::from).collect(),
            student.vocab.hash(),
            (self.cfg.dims.d, self.cfg.dims.h, None),
            Some(pooling),
            outcome,
        )?;
        Ok((student, module))
    }

    /// Fine-tune an MSE-distilled student through a frozen decoder's CE.
    pub fn ce_finetune(
        &self,
        student: &mut SequenceEncoder,
        decoder: &EmbeddingConditionedDecoder,
        lang: &str,
        seed: u64,
    ) -> SuiteResult<(TrainOutcome, ProvenanceMeta)> {
        let (train, valid) = self.student_pairs(lang)?;
        let outcome = ce_finetune_student(
            "distill_mse",
            decoder,
            &train,
            &valid,
            student,
            &self.cfg.train.student.to_train_config(seed),
        )?;
        let provenance = ProvenanceMeta {
            encoders_seen: vec!["teacher".into()],
            languages_seen: vec![lang.to_string(), self.pivot.clone()],
            input_kinds: vec!["text".into()],
            target_kinds: vec![format!("text:{}", self.pivot)],
            training_method: "ce_finetune".into(),
        };
        Ok((outcome, provenance))
    }

    /// Persist a CE-fine-tuned student under its own id.
    pub fn save_finetuned_student(
        &self,
        student: &SequenceEncoder,
        lang: &str,
        seed: u64,
        provenance: ProvenanceMeta,
        outcome: TrainOutcome,
    ) -> SuiteResult<TrainedModule> {
        let id = format!("enc-{lang}-ce-s{seed}");
        self.save_module(
            SaveSpec {
                id: &id,
                kind: ModuleKind::TextEncoder,
                language: Some(lang),
                modality: Modality::Text,
                seed: self.student_seed(lang, seed),
                provenance,
            },
            &student.params,
            student.vocab.content_tokens().map(String::from).collect(),
            student.vocab.hash(),
            (self.cfg.dims.d, self.cfg.dims.h, None),
            Some(student.pooling),
            outcome,
        )
    }

    /// Decoder for a non-pivot target: pivot-side bitexts plus raw target
    /// data, with the target language's student as the raw encoder.
    pub fn train_nonpivot_decoder(
        &self,
        teacher: &SequenceEncoder,
        target: &str,
        objective: DecoderObjective,
        seed: u64,
    ) -> SuiteResult<(EmbeddingConditionedDecoder, TrainedModule)> {
        let cfg = &self.cfg;
        self.cfg.language(target)?;
        let registry = Registry::open_or_create(&checkpoints_dir(&self.out))?;
        let raw_encoder = match registry.load_module(&format!("enc-{target}-s{seed}"))? {
            crate::registry::LoadedModule::TextEncoder(e) => e,
            _ => {
                return Err(SuiteError::Other(format!(
                    "enc-{target}-s{seed} is not a text encoder"
                )))
            }
        };
        let tag = objective.tag();
        let id = format!("dec-{target}-{}-s{seed}", tag.replace('_', "-"));
        let mut decoder = EmbeddingConditionedDecoder::new(
            &id,
            self.ds.vocabs[target].clone(),
            cfg.dims.h,
            cfg.dims.d,
            seed ^ 0xD_EC0DE,
        );
        let budget = cfg.language(target)?.bitext_budget.min(self.ds.train.len());
        // Bitext stream: pivot embeddings → target text; raw stream:
        // target-student embeddings → target text.
        let objective = match objective {
            DecoderObjective::AeBitext { mix, .. } => DecoderObjective::AeBitext {
                source_lang: self.pivot.clone(),
                mix,
            },
            other => other,
        };
        let take = if matches!(objective, DecoderObjective::AeBitext { .. }) {
            budget
        } else {
            self.ds.train.len()
        };
        let train = AlignedText {
            src: sentences_of(&self.ds.train, &self.pivot, take),
            tgt: sentences_of(&self.ds.train, target, take),
        };
        let valid = AlignedText {
            src: sentences_of(&self.ds.valid, &self.pivot, usize::MAX),
            tgt: sentences_of(&self.ds.valid, target, usize::MAX),
        };
        let bitext_encoder = matches!(objective, DecoderObjective::AeBitext { .. }).then_some(teacher);
        let outcome = train_decoder(
            objective,
            &raw_encoder,
            bitext_encoder,
            &train,
            &valid,
            &mut decoder,
            &cfg.train.decoder.to_train_config(seed),
        )?;
        let mut encoders_seen = vec![raw_encoder.id.clone()];
        if bitext_encoder.is_some() {
            encoders_seen.push("teacher".into());
        }
        let module = self.save_module(
            SaveSpec {
                id: &id,
                kind: ModuleKind::TextDecoder,
                language: Some(target),
                modality: Modality::Text,
                seed: seed ^ 0xD_EC0DE,
                provenance: ProvenanceMeta {
                    encoders_seen,
                    languages_seen: vec![target.to_string(), self.pivot.clone()],
                    input_kinds: vec!["embedding".into()],
                    target_kinds: vec![format!("text:{target}")],
                    training_method: format!("decoder_{tag}_nonpivot"),
                },
            },
            &decoder.params,
            decoder.vocab.content_tokens().map(String::from).collect(),
            decoder.vocab.hash(),
            (cfg.dims.d, cfg.dims.h, None),
            None,
            outcome,
        )?;
        Ok((decoder, module))
    }

    /// Train one decoder variant against the frozen teacher (and frozen
    /// bitext-source student when the objective uses bitexts).
    pub fn train_decoder_variant(
        &self,
        teacher: &SequenceEncoder,
        bitext_encoder: Option<&SequenceEncoder>,
        objective: DecoderObjective,
        seed: u64,
    ) -> SuiteResult<(EmbeddingConditionedDecoder, TrainedModule)> {
        let cfg = &self.cfg;
        let tag = objective.tag();
        let id = format!("dec-{}-s{seed}", tag.replace('_', "-"));
        let mut decoder = EmbeddingConditionedDecoder::new(
            &id,
            self.ds.vocabs[&self.pivot].clone(),
            cfg.dims.h,
            cfg.dims.d,
            seed ^ 0xD_EC0DE,
        );
        let (train, valid, mut provenance) = match &objective {
            DecoderObjective::AeBitext { source_lang, .. } => {
                let budget = cfg.language(source_lang)?.bitext_budget;
                let take = budget.min(self.ds.train.len());
                let enc = bitext_encoder.ok_or(TrainError::MissingBitextEncoder)?;
                (
                    AlignedText {
                        src: sentences_of(&self.ds.train, source_lang, take),
                        tgt: sentences_of(&self.ds.train, &self.pivot, take),
                    },
                    AlignedText {
                        src: sentences_of(&self.ds.valid, source_lang, usize::MAX),
                        tgt: sentences_of(&self.ds.valid, &self.pivot, usize::MAX),
                    },
                    ProvenanceMeta {
                        encoders_seen: vec!["teacher".into(), enc.id.clone()],
                        languages_seen: vec![self.pivot.clone(), source_lang.clone()],
                        input_kinds: vec!["embedding".into()],
                        target_kinds: vec![format!("text:{}", self.pivot)],
                        training_method: "decoder_ae_bitext".into(),
                    },
                )
            }
            _ => (
                AlignedText::tgt_only(sentences_of(&self.ds.train, &self.pivot, usize::MAX)),
                AlignedText::tgt_only(sentences_of(&self.ds.valid, &self.pivot, usize::MAX)),
                ProvenanceMeta {
                    encoders_seen: vec!["teacher".into()],
                    languages_seen: vec![self.pivot.clone()],
                    input_kinds: vec!["embedding".into()],
                    target_kinds: vec![format!("text:{}", self.pivot)],
                    training_method: format!("decoder_{tag}"),
                },
            ),
        };
        if matches!(objective, DecoderObjective::AeNoise { .. }) {
            provenance.input_kinds = vec!["embedding+noise".into()];
        }
        let outcome = train_decoder(
            objective,
            teacher,
            bitext_encoder,
            &train,
            &valid,
            &mut decoder,
            &cfg.train.decoder.to_train_config(seed),
        )?;
        let module = self.save_module(
            SaveSpec {
                id: &id,
                kind: ModuleKind::TextDecoder,
                language: Some(&self.pivot),
                modality: Modality::Text,
                seed: seed ^ 0xD_EC0DE,
                provenance,
            },
            &decoder.params,
            decoder.vocab.content_tokens().map(String::from).collect(),
            decoder.vocab.hash(),
            (cfg.dims.d, cfg.dims.h, None),
            None,
            outcome,
        )?;
        Ok((decoder, module))
    }

    /// Train a frame encoder for `lang` under a teacher mode. For the
    /// pivot language the "text student" is the teacher itself.
    pub fn train_frame_student(
        &self,
        lang: &str,
        mode: TeacherMode,
        text_student: Option<&SequenceEncoder>,
        teacher: Option<&SequenceEncoder>,
        seed: u64,
    ) -> SuiteResult<(FrameEncoder, TrainedModule)> {
        let cfg = &self.cfg;
        let id = if lang == self.pivot.as_str() {
            format!("enc-frames-{lang}-s{seed}")
        } else {
            format!("enc-frames-{lang}-{}-s{seed}", mode.tag())
        };
        let mut encoder = FrameEncoder::new(
            &id,
            cfg.dims.f,
            cfg.dims.h,
            cfg.dims.d,
            self.student_seed(&id, seed),
        );
        let train = speech_data_of(&self.ds.train, lang, &self.pivot);
        let valid = speech_data_of(&self.ds.valid, lang, &self.pivot);
        let outcome = train_speech_student(
            mode,
            text_student,
            teacher,
            &train,
            &valid,
            &mut encoder,
            &cfg.train.speech.to_train_config(seed),
        )?;
        let mut encoders_seen = Vec::new();
        if let Some(e) = text_student {
            encoders_seen.push(e.id.clone());
        }
        if let Some(e) = teacher {
            if !encoders_seen.contains(&e.id) {
                encoders_seen.push(e.id.clone());
            }
        }
        let module = self.save_module(
            SaveSpec {
                id: &id,
                kind: ModuleKind::FrameEncoder,
                language: Some(lang),
                modality: Modality::Speech,
                seed: self.student_seed(&id, seed),
                provenance: ProvenanceMeta {
                    encoders_seen,
                    languages_seen: vec![lang.to_string()],
                    input_kinds: vec!["frames".into()],
                    target_kinds: vec![format!("embedding:mse:{}", mode.tag())],
                    training_method: format!("speech_student_{}", mode.tag()),
                },
            },
            &encoder.params,
            Vec::new(),
            String::new(),
            (cfg.dims.d, cfg.dims.h, Some(cfg.dims.f)),
            None,
            outcome,
        )?;
        Ok((encoder, module))
    }

    /// Train the pivot unit decoder from raw frames (no text anywhere) or
    /// from transcripts through the frozen teacher.
    pub fn train_unit_decoder_variant(
        &self,
        source_tag: &str,
        frame_encoder: Option<&FrameEncoder>,
        teacher: Option<&SequenceEncoder>,
        seed: u64,
    ) -> SuiteResult<(EmbeddingConditionedDecoder, TrainedModule)> {
        let cfg = &self.cfg;
        let id = format!("dec-units-{source_tag}-s{seed}");
        let mut decoder = EmbeddingConditionedDecoder::for_units(
            &id,
            cfg.dims.k,
            cfg.dims.h,
            cfg.dims.d,
            seed ^ 0x0115,
        );
        let unit_data = |corpus: &ParallelCorpus| -> UnitData {
            let records = corpus.speech_records(&self.pivot);
            UnitData {
                frames: records.iter().map(|r| r.frames[&self.pivot].clone()).collect(),
                transcripts: records.iter().map(|r| r.text[&self.pivot].clone()).collect(),
                units: records
                    .iter()
                    .map(|r| normalize_units(&r.units[&self.pivot]))
                    .collect(),
            }
        };
        let train = unit_data(&self.ds.train);
        let valid = unit_data(&self.ds.valid);
        let (source, provenance) = match source_tag {
            "raw" => {
                let enc = frame_encoder.ok_or_else(|| {
                    SuiteError::Other("raw unit decoder needs a frame encoder".into())
                })?;
                (
                    UnitSource::RawFrames(enc),
                    ProvenanceMeta {
                        encoders_seen: vec![enc.id.clone()],
                        languages_seen: vec![self.pivot.clone()],
                        input_kinds: vec!["frames".into(), "embedding".into()],
                        target_kinds: vec!["units".into()],
                        training_method: "unit_decoder_raw".into(),
                    },
                )
            }
            "transcripts" => {
                let enc = teacher.ok_or_else(|| {
                    SuiteError::Other("transcript unit decoder needs the teacher".into())
                })?;
                (
                    UnitSource::Transcripts(enc),
                    ProvenanceMeta {
                        encoders_seen: vec![enc.id.clone()],
                        languages_seen: vec![self.pivot.clone()],
                        input_kinds: vec!["text".into(), "embedding".into()],
                        target_kinds: vec!["units".into()],
                        training_method: "unit_decoder_transcripts".into(),
                    },
                )
            }
            other => {
                return Err(SuiteError::Other(format!(
                    "unknown unit decoder source {other:?}"
                )))
            }
        };
        let outcome = train_unit_decoder(
            source,
            &train,
            &valid,
            &mut decoder,
            &cfg.train.unit.to_train_config(seed),
        )?;
        let module = self.save_module(
            SaveSpec {
                id: &id,
                kind: ModuleKind::UnitDecoder,
                language: Some(&self.pivot),
                modality: Modality::Speech,
                seed: seed ^ 0x0115,
                provenance,
            },
            &decoder.params,
            decoder.vocab.content_tokens().map(String::from).collect(),
            decoder.vocab.hash(),
            (cfg.dims.d, cfg.dims.h, None),
            None,
            outcome,
        )?;
        Ok((decoder, module))
    }
}

pub use eval_helpers::*;

mod eval_helpers {
    use super::*;

    /// Greedy-translate a test corpus through a composed pipeline and
    /// score against the decoder-language references.
    pub fn eval_text_pairs(
        pipeline: &Pipeline,
        corpus: &ParallelCorpus,
        src_lang: &str,
        tgt_lang: &str,
        speech_subset_lang: Option<&str>,
    ) -> SuiteResult<(PairReport, ByLengthSummary)> {
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for rec in &corpus.records {
            if let Some(lang) = speech_subset_lang {
                if !rec.frames.contains_key(lang) {
                    continue;
                }
            }
            let out = pipeline.translate(TranslateInput::Tokens(&rec.text[src_lang]))?;
            hyps.push(out.tokens);
            refs.push(rec.text[tgt_lang].clone());
        }
        let report = bleu(&hyps, &refs)?;
        let by_len = bleu_by_length(&hyps, &refs)?;
        let summary = ByLengthSummary {
            bleu: by_len
                .buckets
                .iter()
                .map(|b| b.as_ref().map(|r| r.bleu))
                .collect(),
            pair_counts: by_len.pair_counts,
        };
        let mut pair = PairReport::from_bleu(
            &pipeline.encoder_id,
            &pipeline.decoder_id,
            "text",
            pipeline.zero_shot,
            &report,
        );
        pair.by_length = Some(summary.clone());
        Ok((pair, summary))
    }

    /// Frames → text decoder, scored against pivot references.
    pub fn eval_speech_to_text(
        pipeline: &Pipeline,
        corpus: &ParallelCorpus,
        lang: &str,
        tgt_lang: &str,
    ) -> SuiteResult<PairReport> {
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for rec in corpus.speech_records(lang) {
            let out = pipeline.translate(TranslateInput::Frames(&rec.frames[lang]))?;
            hyps.push(out.tokens);
            refs.push(rec.text[tgt_lang].clone());
        }
        let report = bleu(&hyps, &refs)?;
        Ok(PairReport::from_bleu(
            &pipeline.encoder_id,
            &pipeline.decoder_id,
            "speech",
            pipeline.zero_shot,
            &report,
        ))
    }

    /// Frames → unit decoder → vocoder, scored against pivot references.
    pub fn eval_speech_to_speech(
        pipeline: &Pipeline,
        corpus: &ParallelCorpus,
        lang: &str,
        tgt_lang: &str,
        table: &VocoderTable,
    ) -> SuiteResult<PairReport> {
        let mut unit_hyps = Vec::new();
        let mut refs = Vec::new();
        for rec in corpus.speech_records(lang) {
            let out = pipeline.translate(TranslateInput::Frames(&rec.frames[lang]))?;
            unit_hyps.push(out.units.unwrap_or_default());
            refs.push(rec.text[tgt_lang].clone());
        }
        let report = eval_speech_output(&unit_hyps, &refs, table)?;
        Ok(PairReport::from_bleu(
            &pipeline.encoder_id,
            &pipeline.decoder_id,
            "speech->speech",
            pipeline.zero_shot,
            &report,
        ))
    }

    /// Test-split embeddings for the distance report.
    pub fn embeddings_for_distances(
        encoders: &BTreeMap<LangId, &SequenceEncoder>,
        teacher: &SequenceEncoder,
        corpus: &ParallelCorpus,
        pivot: &str,
    ) -> SuiteResult<(BTreeMap<String, Vec<SentenceEmbedding>>, Vec<SentenceEmbedding>)> {
        let mut pivot_embs = Vec::new();
        for rec in &corpus.records {
            let ids = teacher.vocab.encode(&rec.text[pivot]);
            pivot_embs.push(teacher.embed_sentence(&ids)?);
        }
        let mut per_lang = BTreeMap::new();
        for (lang, enc) in encoders {
            let mut embs = Vec::new();
            for rec in &corpus.records {
                let ids = enc.vocab.encode(&rec.text[lang.as_str()]);
                embs.push(enc.embed_sentence(&ids)?);
            }
            per_lang.insert(lang.clone(), embs);
        }
        Ok((per_lang, pivot_embs))
    }
}

/// One replication: all per-seed trainings in dependency order (text
/// students → speech students → decoders → unit decoders), returning the
/// trained modules for registration.
pub fn run_seed_trainings(
    ctx: &SuiteCtx,
    teacher: &SequenceEncoder,
    seed: u64,
) -> SuiteResult<Vec<TrainedModule>> {
    let mut modules = Vec::new();

    // Text students.
    let (l1_student, m) = ctx.train_text_student(teacher, "L1", DistillLoss::Mse, Pooling::Max, seed)?;
    modules.push(m);
    let (_l2_student, m) = ctx.train_text_student(teacher, "L2", DistillLoss::Mse, Pooling::Max, seed)?;
    modules.push(m);

    // Speech students (need their text students first).
    let (l0_frames, m) =
        ctx.train_frame_student(&ctx.pivot.clone(), TeacherMode::Transcription, Some(teacher), None, seed)?;
    modules.push(m);
    let (_, m) = ctx.train_frame_student(
        "L1",
        TeacherMode::Transcription,
        Some(&l1_student),
        None,
        seed,
    )?;
    modules.push(m);
    let (_, m) = ctx.train_frame_student("L1", TeacherMode::Translation, None, Some(teacher), seed)?;
    modules.push(m);

    // Decoders.
    let (_, m) = ctx.train_decoder_variant(teacher, None, DecoderObjective::Ae, seed)?;
    modules.push(m);
    let noise = NoiseSpec {
        alpha: ctx.cfg.noise.alpha,
        mode: ctx.cfg.noise.mode,
        seed: ctx.cfg.noise.seed ^ seed,
    };
    let (_, m) = ctx.train_decoder_variant(
        teacher,
        None,
        DecoderObjective::AeNoise {
            noise,
            prob: ctx.cfg.noise.prob,
        },
        seed,
    )?;
    modules.push(m);
    let (_, m) = ctx.train_decoder_variant(
        teacher,
        Some(&l1_student),
        DecoderObjective::AeBitext {
            source_lang: ctx.cfg.bitext.source_lang.clone(),
            mix: ctx.cfg.bitext.mix,
        },
        seed,
    )?;
    modules.push(m);

    // Unit decoder on raw pivot frames.
    let (_, m) = ctx.train_unit_decoder_variant("raw", Some(&l0_frames), None, seed)?;
    modules.push(m);

    Ok(modules)
}

/// All composition evaluations for one seed, loading every module back
/// from its checkpoint so the report reflects exactly what is on disk.
pub fn run_seed_evals(
    ctx: &SuiteCtx,
    registry: &Registry,
    table: &VocoderTable,
    modules: &BTreeMap<String, TrainedModule>,
    seed: u64,
) -> SuiteResult<SeedReport> {
    let cfg = &ctx.cfg;
    let pivot = ctx.pivot.as_str();
    let max_len = cfg.max_len;
    let test = &ctx.ds.test;
    let objectives = ["ae", "ae-noise", "ae-bitext"];

    let mut t2t = BTreeMap::new();
    for obj in objectives {
        let dec_id = format!("dec-{obj}-s{seed}");
        for src in [pivot, "L1", "L2"] {
            let enc_id = if src == pivot {
                "teacher".to_string()
            } else {
                format!("enc-{src}-s{seed}")
            };
            let pipeline = compose(&enc_id, &dec_id, registry, max_len)?;
            let (pair, _) = eval_text_pairs(&pipeline, test, src, pivot, None)?;
            t2t.insert(format!("{src}->{pivot}/{obj}"), pair);
        }
        // Same text pipeline restricted to the speech-test rows, as the
        // reference point for the cross-modal comparisons.
        let enc_id = format!("enc-L1-s{seed}");
        let pipeline = compose(&enc_id, &dec_id, registry, max_len)?;
        let (pair, _) = eval_text_pairs(&pipeline, test, "L1", pivot, Some("L1"))?;
        t2t.insert(format!("L1->{pivot}@speech/{obj}"), pair);
    }

    let mut s2t = BTreeMap::new();
    for mode in ["transcription", "translation"] {
        let enc_id = format!("enc-frames-L1-{mode}-s{seed}");
        for obj in objectives {
            let dec_id = format!("dec-{obj}-s{seed}");
            let pipeline = compose(&enc_id, &dec_id, registry, max_len)?;
            let pair = eval_speech_to_text(&pipeline, test, "L1", pivot)?;
            s2t.insert(format!("L1-frames->{pivot}/{obj}/{mode}"), pair);
        }
    }

    let mut s2s = BTreeMap::new();
    {
        let enc_id = format!("enc-frames-L1-transcription-s{seed}");
        let dec_id = format!("dec-units-raw-s{seed}");
        let pipeline = compose(&enc_id, &dec_id, registry, max_len)?;
        let pair = eval_speech_to_speech(&pipeline, test, "L1", pivot, table)?;
        s2s.insert(format!("L1-frames->{pivot}-speech/raw"), pair);
    }

    // Distance reports: trained students vs fresh (untrained) students.
    let teacher = match registry.load_module("teacher")? {
        crate::registry::LoadedModule::TextEncoder(e) => e,
        _ => return Err(SuiteError::Other("teacher is not a text encoder".into())),
    };
    let mut trained_students = BTreeMap::new();
    for lang in ["L1", "L2"] {
        match registry.load_module(&format!("enc-{lang}-s{seed}"))? {
            crate::registry::LoadedModule::TextEncoder(e) => {
                trained_students.insert(lang.to_string(), e);
            }
            _ => return Err(SuiteError::Other("student is not a text encoder".into())),
        }
    }
    let trained_refs: BTreeMap<LangId, &SequenceEncoder> = trained_students
        .iter()
        .map(|(k, v)| (k.clone(), v))
        .collect();
    let (per_lang, pivot_embs) =
        embeddings_for_distances(&trained_refs, &teacher, test, pivot)?;
    let distances_trained = distance_report(&per_lang, &pivot_embs)?;

    let untrained: BTreeMap<String, SequenceEncoder> = ["L1", "L2"]
        .iter()
        .map(|lang| {
            (
                lang.to_string(),
                SequenceEncoder::new(
                    &format!("enc-{lang}-untrained-s{seed}"),
                    ctx.ds.vocabs[*lang].clone(),
                    cfg.dims.h,
                    cfg.dims.d,
                    Pooling::Max,
                    ctx.student_seed(lang, seed),
                ),
            )
        })
        .collect();
    let untrained_refs: BTreeMap<LangId, &SequenceEncoder> =
        untrained.iter().map(|(k, v)| (k.clone(), v)).collect();
    let (per_lang_u, pivot_embs_u) =
        embeddings_for_distances(&untrained_refs, &teacher, test, pivot)?;
    let distances_untrained = distance_report(&per_lang_u, &pivot_embs_u)?;

    // Metric sections from the training outcomes.
    let mut students = BTreeMap::new();
    let mut speech_students = BTreeMap::new();
    let mut decoders = BTreeMap::new();
    let mut unit_decoders = BTreeMap::new();
    let mut unit_input_kinds = Vec::new();
    let mut unit_target_kinds = Vec::new();
    for (id, module) in modules {
        let metrics = &module.outcome.final_metrics;
        match module.meta.kind {
            ModuleKind::TextEncoder => {
                students.insert(
                    id.clone(),
                    StudentMetrics {
                        initial_val_loss: module.outcome.initial_val_loss,
                        best_val_loss: module.outcome.best_val_loss,
                    },
                );
            }
            ModuleKind::FrameEncoder => {
                speech_students.insert(
                    id.clone(),
                    StudentMetrics {
                        initial_val_loss: module.outcome.initial_val_loss,
                        best_val_loss: module.outcome.best_val_loss,
                    },
                );
            }
            ModuleKind::TextDecoder => {
                decoders.insert(
                    id.clone(),
                    DecoderMetrics {
                        val_loss: module.outcome.best_val_loss,
                        val_token_accuracy: metrics.get("val_metric").copied().unwrap_or(0.0),
                    },
                );
            }
            ModuleKind::UnitDecoder => {
                unit_decoders.insert(
                    id.clone(),
                    DecoderMetrics {
                        val_loss: module.outcome.best_val_loss,
                        val_token_accuracy: metrics.get("val_metric").copied().unwrap_or(0.0),
                    },
                );
                unit_input_kinds = module.meta.provenance.input_kinds.clone();
                unit_target_kinds = module.meta.provenance.target_kinds.clone();
            }
            ModuleKind::Teacher => {}
        }
    }

    Ok(SeedReport {
        students,
        decoders,
        speech_students,
        unit_decoders,
        t2t,
        s2t,
        s2s,
        distances_trained,
        distances_untrained,
        unit_decoder_input_kinds: unit_input_kinds,
        unit_decoder_target_kinds: unit_target_kinds,
    })
}

/// The full acceptance experiment: teacher, all per-seed trainings
/// (optionally parallel across seeds), all composition evaluations, and
/// the consolidated report written under the output directory.
pub fn run_paper_suite(cfg: &ExperimentConfig, out: &Path) -> SuiteResult<SuiteReport> {
    let ctx = SuiteCtx::new(cfg.clone(), out)?;
    let table = build_vocoder_table(&ctx.ds, &ctx.pivot)?;
    std::fs::write(
        data_dir(out).join("vocoder.json"),
        serde_json::to_string(&table).map_err(|e| SuiteError::Other(e.to_string()))?,
    )?;

    let (teacher, teacher_modules) = ctx.build_teacher()?;
    let teacher_section = TeacherSection {
        val_loss: teacher_modules[0].outcome.best_val_loss,
        val_token_accuracy: teacher_modules[0]
            .outcome
            .final_metrics
            .get("val_metric")
            .copied()
            .unwrap_or(0.0),
    };

    // Per-seed trainings, up to `jobs` replications at a time.
    let seeds = ctx.cfg.seeds.clone();
    let jobs = ctx.cfg.jobs.max(1).min(seeds.len());
    let mut seed_modules: BTreeMap<u64, Vec<TrainedModule>> = BTreeMap::new();
    for chunk in seeds.chunks(jobs) {
        let results: Vec<(u64, SuiteResult<Vec<TrainedModule>>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|seed| {
                    let ctx_ref = &ctx;
                    let teacher_ref = &teacher;
                    let s = *seed;
                    scope.spawn(move || (s, run_seed_trainings(ctx_ref, teacher_ref, s)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for (seed, result) in results {
            seed_modules.insert(seed, result?);
        }
    }

    // Single-writer registration pass.
    let mut registry = Registry::open_or_create(&checkpoints_dir(out))?;
    for module in &teacher_modules {
        registry.register(&module.meta, &module.file)?;
    }
    for modules in seed_modules.values() {
        for module in modules {
            registry.register(&module.meta, &module.file)?;
        }
    }

    // Deterministic evaluation order.
    let mut per_seed = BTreeMap::new();
    for (seed, modules) in &seed_modules {
        let by_id: BTreeMap<String, TrainedModule> = modules
            .iter()
            .map(|m| {
                (
                    m.meta.id.clone(),
                    TrainedModule {
                        meta: m.meta.clone(),
                        file: m.file.clone(),
                        outcome: m.outcome.clone(),
                    },
                )
            })
            .collect();
        let report = run_seed_evals(&ctx, &registry, &table, &by_id, *seed)?;
        per_seed.insert(format!("{seed}"), report);
    }

    let report = SuiteReport {
        config_hash: ctx.config_hash.clone(),
        corpus_hash: ctx.ds.corpus_hash.clone(),
        seeds,
        decoding_strategy: "greedy".to_string(),
        teacher: teacher_section,
        per_seed,
    };
    let dir = reports_dir(out);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("consolidated.json"), report.to_json())?;
    std::fs::write(dir.join("pairs.csv"), report.to_csv())?;
    Ok(report)
}
