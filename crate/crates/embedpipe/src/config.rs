//! Experiment configuration: one JSON document per experiment, validated
//! up front; every artifact embeds the config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Grammar, LangId, LanguageSpec, Transform};
use crate::space::NoiseMode;
use crate::tensor::AdamConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config read: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type ConfigResult<T> = Result<T, ConfigError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub f: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageConfig {
    #[serde(flatten)]
    pub spec: LanguageSpec,
    /// Aligned sentence pairs available for distilling this language's
    /// student (the resource budget).
    #[serde(default)]
    pub bitext_budget: usize,
    /// Whether this language gets a frame ("speech") modality.
    #[serde(default)]
    pub speech: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSizes {
    pub seed: u64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub speech_train: usize,
    pub speech_valid: usize,
    pub speech_test: usize,
    pub frame_proto_seed: u64,
    pub frame_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub alpha: f64,
    #[serde(default)]
    pub mode: NoiseMode,
    pub seed: u64,
    /// Per-example application probability during AE_NOISE training.
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BitextConfig {
    pub source_lang: LangId,
    /// Fraction of bitext batches in AE_BITEXT training, in (0, 1].
    pub mix: f64,
}

/// Per-role training hyperparameters; the run seed is filled in per
/// replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleTrain {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
}

impl RoleTrain {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            patience: self.patience,
            validate_every: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub teacher: RoleTrain,
    pub student: RoleTrain,
    pub decoder: RoleTrain,
    pub speech: RoleTrain,
    pub unit: RoleTrain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dims: Dims,
    /// First entry is the pivot (identity transform).
    pub languages: Vec<LanguageConfig>,
    pub corpus: CorpusSizes,
    pub noise: NoiseConfig,
    pub bitext: BitextConfig,
    pub teacher_seed: u64,
    pub train: TrainSection,
    /// Replication seeds: each drives one independent set of students,
    /// decoders, and evaluations.
    pub seeds: Vec<u64>,
    /// Greedy decode cap during evaluation.
    pub max_len: usize,
    /// Concurrent replications in run-paper-suite.
    pub jobs: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn pivot(&self) -> &LanguageConfig {
        &self.languages[0]
    }

    pub fn language(&self, id: &str) -> ConfigResult<&LanguageConfig> {
        self.languages
            .iter()
            .find(|l| l.spec.id == id)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown language {id:?}")))
    }

    pub fn validate(&self) -> ConfigResult<()> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.languages.is_empty() {
            return fail("at least one language (the pivot) required".into());
        }
        if !self.languages[0].spec.is_identity() {
            return fail("the first language is the pivot and must be the identity".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for lang in &self.languages {
            if !ids.insert(&lang.spec.id) {
                return fail(format!("duplicate language id {:?}", lang.spec.id));
            }
            if lang.bitext_budget > 5000 {
                return fail(format!(
                    "bitext budget {} for {} exceeds the desk-scale cap of 5000",
                    lang.bitext_budget, lang.spec.id
                ));
            }
        }
        for (name, v) in [
            ("dims.d", self.dims.d),
            ("dims.h", self.dims.h),
            ("dims.f", self.dims.f),
            ("dims.k", self.dims.k),
            ("corpus.train", self.corpus.train),
            ("corpus.valid", self.corpus.valid),
            ("corpus.test", self.corpus.test),
            ("corpus.speech_train", self.corpus.speech_train),
            ("corpus.speech_valid", self.corpus.speech_valid),
            ("corpus.speech_test", self.corpus.speech_test),
            ("max_len", self.max_len),
            ("jobs", self.jobs),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.corpus.train > 5000 {
            return fail("corpus.train exceeds the desk-scale cap of 5000".into());
        }
        if self.corpus.speech_train > self.corpus.train
            || self.corpus.speech_valid > self.corpus.valid
            || self.corpus.speech_test > self.corpus.test
        {
            return fail("speech subset cannot exceed its text split".into());
        }
        let grammar_vocab = Grammar::default().vocab_size();
        if self.dims.k != grammar_vocab {
            return fail(format!(
                "dims.k must equal the pivot content vocabulary ({grammar_vocab}) so the \
                 vocoder table is a bijection"
            ));
        }
        if self.noise.alpha < 0.0 {
            return fail("noise.alpha must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.noise.prob) {
            return fail("noise.prob must be in [0, 1]".into());
        }
        if !(self.bitext.mix > 0.0 && self.bitext.mix <= 1.0) {
            return fail("bitext.mix must be in (0, 1]".into());
        }
        if self.bitext.source_lang == self.languages[0].spec.id {
            return fail("bitext.source_lang must not be the pivot".into());
        }
        self.language(&self.bitext.source_lang)
            .map_err(|_| ConfigError::Invalid(format!(
                "bitext.source_lang {:?} is not a configured language",
                self.bitext.source_lang
            )))?;
        if self.seeds.is_empty() {
            return fail("at least one replication seed required".into());
        }
        for role in [
            &self.train.teacher,
            &self.train.student,
            &self.train.decoder,
            &self.train.speech,
            &self.train.unit,
        ] {
            if role.epochs == 0 || role.batch_size == 0 || role.lr <= 0.0 {
                return fail("train roles need positive epochs, batch_size and lr".into());
            }
        }
        Ok(())
    }

    /// The configuration run-paper-suite ships with.
    pub fn default_config() -> Self {
        Self {
            dims: Dims {
                d: 64,
                h: 64,
                f: 16,
                k: 64,
            },
            languages: vec![
                LanguageConfig {
                    spec: LanguageSpec::identity("L0"),
                    bitext_budget: 0,
                    speech: true,
                },
                LanguageConfig {
                    spec: LanguageSpec {
                        id: "L1".into(),
                        transforms: vec![
                            Transform::Permute { seed: 11 },
                            Transform::ReverseWindow { window: 3 },
                        ],
                    },
                    bitext_budget: 1500,
                    speech: true,
                },
                LanguageConfig {
                    spec: LanguageSpec {
                        id: "L2".into(),
                        transforms: vec![
                            Transform::Permute { seed: 22 },
                            Transform::Affix { seed: 23 },
                            Transform::Split { seed: 24 },
                            Transform::ReverseWindow { window: 2 },
                        ],
                    },
                    bitext_budget: 150,
                    speech: false,
                },
            ],
            corpus: CorpusSizes {
                seed: 42,
                train: 2000,
                valid: 250,
                test: 400,
                speech_train: 800,
                speech_valid: 120,
                speech_test: 200,
                frame_proto_seed: 7001,
                frame_seed: 7002,
            },
            noise: NoiseConfig {
                alpha: 0.25,
                mode: NoiseMode::PerDimStd,
                seed: 9001,
                prob: 1.0,
            },
            bitext: BitextConfig {
                source_lang: "L1".into(),
                mix: 0.5,
            },
            teacher_seed: 1234,
            train: TrainSection {
                teacher: RoleTrain {
                    epochs: 18,
                    batch_size: 16,
                    lr: 2e-3,
                    patience: 5,
                },
                student: RoleTrain {
                    epochs: 20,
                    batch_size: 16,
                    lr: 2e-3,
                    patience: 5,
                },
                decoder: RoleTrain {
                    epochs: 15,
                    batch_size: 16,
                    lr: 2e-3,
                    patience: 5,
                },
                speech: RoleTrain {
                    epochs: 10,
                    batch_size: 16,
                    lr: 2e-3,
                    patience: 5,
                },
                unit: RoleTrain {
                    epochs: 12,
                    batch_size: 16,
                    lr: 2e-3,
                    patience: 5,
                },
            },
            seeds: vec![1, 2, 3, 4, 5],
            max_len: 48,
            jobs: 2,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_hashes_stably() {
        let cfg = ExperimentConfig::default_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.hash(), cfg.hash());
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut cfg = ExperimentConfig::default_config();
        cfg.bitext.mix = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default_config();
        cfg.languages[0].spec.transforms.push(Transform::Permute { seed: 1 });
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default_config();
        cfg.dims.k = 32;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default_config();
        cfg.corpus.train = 9000;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default_config();
        cfg.bitext.source_lang = "L0".into();
        assert!(cfg.validate().is_err());
    }
}
