//! Dataset assembly from an experiment config: base corpus, derived
//! languages, frame synthesis, unit codebook, and unit extraction, plus
//! the on-disk layout the CLI's gen-data command produces.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::corpus::{
    base_vocabulary, extract_units, load_corpus, save_corpus, CompiledLanguage, CorpusError,
    CorpusRecord, FrameSynthesizer, Grammar, LangId, ParallelCorpus, Split, UnitCodebook,
};
use crate::eval::{EvalError, VocoderTable};
use crate::models::Vocabulary;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset meta: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("corpus hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
}

pub type DatasetResult<T> = Result<T, DatasetError>;

pub struct DataSet {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
    pub codebook: UnitCodebook,
    pub vocabs: BTreeMap<LangId, Vocabulary>,
    pub synths: BTreeMap<LangId, FrameSynthesizer>,
    pub corpus_hash: String,
}

impl DataSet {
    pub fn split(&self, split: Split) -> &ParallelCorpus {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn language_ids(&self) -> Vec<LangId> {
        self.vocabs.keys().cloned().collect()
    }
}

pub(crate) fn fnv_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn record_frame_seed(base: u64, record_id: u64) -> u64 {
    base ^ record_id.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Generate everything the experiment needs, deterministically from the
/// config: splits are disjoint by construction (global record ids), the
/// codebook is fit on pivot training frames only, and units are extracted
/// raw (normalization happens at training preparation).
pub fn build_dataset(cfg: &ExperimentConfig) -> DatasetResult<DataSet> {
    let grammar = Grammar::default();
    let base_vocab = base_vocabulary(&grammar);
    let pivot_id = cfg.languages[0].spec.id.clone();

    let mut compiled: BTreeMap<LangId, CompiledLanguage> = BTreeMap::new();
    let mut vocabs: BTreeMap<LangId, Vocabulary> = BTreeMap::new();
    for lang in &cfg.languages {
        let c = lang.spec.compile(&base_vocab)?;
        vocabs.insert(lang.spec.id.clone(), c.vocabulary().clone());
        compiled.insert(lang.spec.id.clone(), c);
    }

    let mut synths: BTreeMap<LangId, FrameSynthesizer> = BTreeMap::new();
    for lang in cfg.languages.iter().filter(|l| l.speech) {
        let id = &lang.spec.id;
        synths.insert(
            id.clone(),
            FrameSynthesizer::new(
                id,
                vocabs[id].clone(),
                cfg.dims.f,
                cfg.corpus.frame_proto_seed ^ fnv_str(id),
            ),
        );
    }

    let sizes = [
        (Split::Train, cfg.corpus.train, cfg.corpus.speech_train),
        (Split::Valid, cfg.corpus.valid, cfg.corpus.speech_valid),
        (Split::Test, cfg.corpus.test, cfg.corpus.speech_test),
    ];
    let mut next_id: u64 = 0;
    let mut corpora = Vec::new();
    for (split, n, speech_n) in sizes {
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let id = next_id + i as u64;
            let pivot_sentence = grammar.sentence(cfg.corpus.seed, id);
            let mut text = BTreeMap::new();
            let mut frames = BTreeMap::new();
            for lang in &cfg.languages {
                let lang_id = &lang.spec.id;
                let sentence = compiled[lang_id].apply(&pivot_sentence)?;
                if lang.speech && i < speech_n {
                    let seed = record_frame_seed(cfg.corpus.frame_seed, id);
                    frames.insert(
                        lang_id.clone(),
                        synths[lang_id].synth_frames(&sentence, seed)?,
                    );
                }
                text.insert(lang_id.clone(), sentence);
            }
            records.push(CorpusRecord {
                id,
                text,
                frames,
                units: BTreeMap::new(),
            });
        }
        next_id += n as u64;
        corpora.push(ParallelCorpus { split, records });
    }

    // Unit codebook: pivot training frames only.
    let pivot_train_frames: Vec<Vec<f64>> = corpora[0]
        .records
        .iter()
        .filter_map(|r| r.frames.get(&pivot_id))
        .flatten()
        .cloned()
        .collect();
    let codebook = UnitCodebook::fit(
        &pivot_train_frames,
        cfg.dims.k,
        cfg.corpus.seed ^ 0xC0DEB00C,
    );
    for corpus in &mut corpora {
        for rec in &mut corpus.records {
            if let Some(frames) = rec.frames.get(&pivot_id) {
                rec.units
                    .insert(pivot_id.clone(), extract_units(frames, &codebook)?);
            }
        }
    }

    let mut it = corpora.into_iter();
    let (train, valid, test) = (
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    );
    let corpus_hash = hash_corpora(&[&train, &valid, &test])?;
    Ok(DataSet {
        train,
        valid,
        test,
        codebook,
        vocabs,
        synths,
        corpus_hash,
    })
}

fn hash_corpora(corpora: &[&ParallelCorpus]) -> DatasetResult<String> {
    let mut h = Sha256::new();
    for c in corpora {
        for rec in &c.records {
            h.update(serde_json::to_vec(rec)?);
            h.update([b'\n']);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// The vocoder renders unit k as the pivot token whose frame prototype
/// lands on centroid k. Fails if the codebook does not separate the
/// prototypes into distinct units (no bijection).
pub fn build_vocoder_table(ds: &DataSet, pivot_id: &str) -> DatasetResult<VocoderTable> {
    let synth = &ds.synths[pivot_id];
    let vocab = &ds.vocabs[pivot_id];
    let mut map = BTreeMap::new();
    for token in vocab.content_tokens() {
        let unit = ds.codebook.assign(synth.prototype(token))?;
        if let Some(prev) = map.insert(unit, token.to_string()) {
            return Err(EvalError::BadVocoderTable {
                reason: format!("tokens {prev:?} and {token:?} share unit {unit}"),
            }
            .into());
        }
    }
    Ok(VocoderTable::new(map, ds.codebook.k())?)
}

const SPLIT_FILES: [(Split, &str); 3] = [
    (Split::Train, "corpus.train.jsonl"),
    (Split::Valid, "corpus.valid.jsonl"),
    (Split::Test, "corpus.test.jsonl"),
];

pub fn save_dataset(ds: &DataSet, dir: &Path) -> DatasetResult<()> {
    fs::create_dir_all(dir)?;
    for (split, file) in SPLIT_FILES {
        save_corpus(ds.split(split), &dir.join(file))?;
    }
    fs::write(
        dir.join("codebook.json"),
        serde_json::to_string(&ds.codebook)?,
    )?;
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string(&serde_json::json!({ "corpus_hash": ds.corpus_hash }))?,
    )?;
    Ok(())
}

/// Reload a generated dataset, rebuilding vocabularies and synthesizers
/// from the config and verifying the stored corpus hash.
pub fn load_dataset(cfg: &ExperimentConfig, dir: &Path) -> DatasetResult<DataSet> {
    let grammar = Grammar::default();
    let base_vocab = base_vocabulary(&grammar);
    let langs: Vec<String> = cfg.languages.iter().map(|l| l.spec.id.clone()).collect();
    let mut vocabs = BTreeMap::new();
    for lang in &cfg.languages {
        let c = lang.spec.compile(&base_vocab)?;
        vocabs.insert(lang.spec.id.clone(), c.vocabulary().clone());
    }
    let mut synths = BTreeMap::new();
    for lang in cfg.languages.iter().filter(|l| l.speech) {
        let id = &lang.spec.id;
        synths.insert(
            id.clone(),
            FrameSynthesizer::new(
                id,
                vocabs[id].clone(),
                cfg.dims.f,
                cfg.corpus.frame_proto_seed ^ fnv_str(id),
            ),
        );
    }
    let mut splits = Vec::new();
    for (split, file) in SPLIT_FILES {
        splits.push(load_corpus(&dir.join(file), split, &langs)?);
    }
    let codebook: UnitCodebook =
        serde_json::from_str(&fs::read_to_string(dir.join("codebook.json"))?)?;
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let expected = meta["corpus_hash"].as_str().unwrap_or_default().to_string();
    let mut it = splits.into_iter();
    let (train, valid, test) = (
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    );
    let found = hash_corpora(&[&train, &valid, &test])?;
    if found != expected {
        return Err(DatasetError::HashMismatch { expected, found });
    }
    Ok(DataSet {
        train,
        valid,
        test,
        codebook,
        vocabs,
        synths,
        corpus_hash: found,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // The speech subset must cover all 64 pivot tokens, else k-means has
    // unseen blobs and the vocoder bijection cannot exist.
    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_config();
        cfg.corpus.train = 100;
        cfg.corpus.valid = 12;
        cfg.corpus.test = 12;
        cfg.corpus.speech_train = 80;
        cfg.corpus.speech_valid = 6;
        cfg.corpus.speech_test = 6;
        cfg
    }

    #[test]
    fn build_is_deterministic_with_disjoint_splits() {
        let cfg = small_cfg();
        let a = build_dataset(&cfg).unwrap();
        let b = build_dataset(&cfg).unwrap();
        assert_eq!(a.corpus_hash, b.corpus_hash);

        let mut seen = std::collections::BTreeSet::new();
        for split in [&a.train, &a.valid, &a.test] {
            for rec in &split.records {
                assert!(seen.insert(rec.id), "record id {} in two splits", rec.id);
            }
        }
    }

    #[test]
    fn pivot_units_present_on_speech_records_only() {
        let cfg = small_cfg();
        let ds = build_dataset(&cfg).unwrap();
        let with_units = ds
            .train
            .records
            .iter()
            .filter(|r| r.units.contains_key("L0"))
            .count();
        assert_eq!(with_units, cfg.corpus.speech_train);
        for rec in &ds.train.records {
            assert_eq!(rec.frames.contains_key("L0"), rec.units.contains_key("L0"));
            assert_eq!(rec.frames.contains_key("L1"), rec.frames.contains_key("L0"));
            assert!(!rec.frames.contains_key("L2"));
        }
    }

    #[test]
    fn vocoder_table_is_bijective_and_round_trips() {
        let cfg = small_cfg();
        let ds = build_dataset(&cfg).unwrap();
        let table = build_vocoder_table(&ds, "L0").unwrap();
        assert_eq!(table.k(), cfg.dims.k);
        // Oracle path: units of a reference sentence vocode back to it.
        let rec = &ds.train.records[0];
        let units = crate::corpus::normalize_units(&rec.units["L0"]);
        let rendered = crate::eval::vocode(&units, &table).unwrap();
        assert_eq!(&rendered, &rec.text["L0"]);
    }

    #[test]
    fn save_load_round_trip_verifies_hash() {
        let cfg = small_cfg();
        let ds = build_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let loaded = load_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(loaded.corpus_hash, ds.corpus_hash);
        assert_eq!(loaded.train.len(), ds.train.len());

        // Tamper with a line: the hash check must fail.
        let path = dir.path().join("corpus.train.jsonl");
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen("the", "thf", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_dataset(&cfg, dir.path()),
            Err(DatasetError::HashMismatch { .. })
        ));
    }
}
