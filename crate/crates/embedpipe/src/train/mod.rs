//! Training procedures: teacher pretraining, decoder objectives (AE,
//! AE+noise, AE+bitext), teacher-student distillation, CE fine-tuning
//! through a frozen decoder, speech students, and unit decoders — all with
//! an enforced freezing contract and deterministic batching.

mod checkpoint;
mod tasks;
#[cfg(test)]
mod tests;

pub use checkpoint::{
    apply_arrays, load_checkpoint, parse_checkpoint, save_checkpoint, ArraySpec, CheckpointMeta,
    Modality, ModuleKind, ProvenanceMeta, CKPT_FORMAT,
};
pub use tasks::{
    ce_finetune_student, pretrain_teacher, train_decoder, train_speech_student, train_student,
    train_unit_decoder, AlignedText, DecoderObjective, DistillLoss, SpeechData, TeacherMode,
    UnitData, UnitSource,
};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelError, Params};
use crate::space::SpaceError;
use crate::tensor::{AdamConfig, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("frozen module {name} changed during training")]
    FrozenModuleChanged { name: String },
    #[error("student did not improve validation loss ({initial} -> {best})")]
    NoImprovement { initial: f64, best: f64 },
    #[error("{mode} teacher mode requires {requirement}")]
    MissingPrerequisite { mode: String, requirement: String },
    #[error("unit targets must be normalized; record {index} has consecutive duplicates")]
    UnnormalizedTargets { index: usize },
    #[error("CE fine-tuning requires an MSE-distilled student, got init method {got:?}")]
    BadInit { got: String },
    #[error("bitext objective requires a source-language encoder")]
    MissingBitextEncoder,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("checkpoint verify failed: payload hash mismatch")]
    VerifyFailed,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(&'static str),
    #[error("checkpoint metadata encode: {0}")]
    MetaEncode(#[source] serde_json::Error),
    #[error("checkpoint metadata decode: {0}")]
    MetaDecode(#[source] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type TrainResult<T> = Result<T, TrainError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Early-stop patience, counted in validations.
    pub patience: usize,
    /// Validate every N epochs.
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            epochs: 20,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            patience: 5,
            validate_every: 1,
        }
    }
}

/// One row of the training-curve log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub split: String,
    pub loss: f64,
    pub metric: f64,
}

pub fn write_curve_csv(path: &Path, curve: &[CurveRow]) -> TrainResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,split,loss,metric")?;
    for row in curve {
        writeln!(w, "{},{},{},{}", row.step, row.split, row.loss, row.metric)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<CurveRow>,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub final_metrics: BTreeMap<String, f64>,
    /// Which target stream each batch consumed (objective interleaves).
    pub batch_tags: Vec<String>,
}

/// Records a module's parameter fingerprint; `verify` is the freezing
/// contract — any byte drift is a hard failure.
pub struct FrozenGuard {
    name: String,
    fingerprint: [u8; 32],
}

impl FrozenGuard {
    pub fn new(name: &str, params: &Params) -> Self {
        Self {
            name: name.to_string(),
            fingerprint: params.fingerprint(),
        }
    }

    pub fn verify(&self, params: &Params) -> TrainResult<()> {
        if params.fingerprint() != self.fingerprint {
            return Err(TrainError::FrozenModuleChanged {
                name: self.name.clone(),
            });
        }
        Ok(())
    }
}

/// One training op, driven by [`run_training`]: per-example gradient
/// accumulation, per-batch optimizer application, and validation.
pub(crate) trait Task {
    fn train_len(&self) -> usize;
    /// Accumulate gradients for one example; returns its loss.
    fn example_loss(&mut self, idx: usize, batch_idx: usize, counter: u64) -> TrainResult<f64>;
    fn apply_batch(&mut self, batch_len: usize) -> TrainResult<()>;
    /// Validation (loss, metric); lower loss is better.
    fn validate(&mut self) -> TrainResult<(f64, f64)>;
    fn snapshot(&self) -> Vec<Tensor>;
    fn restore(&mut self, snap: &[Tensor]);
    /// Tag of the target stream batch `batch_idx` consumes, if the
    /// objective interleaves streams.
    fn batch_tag(&self, _batch_idx: usize) -> Option<String> {
        None
    }
}

/// Deterministic epoch loop: seeded shuffling, mean-gradient batches,
/// early stopping on validation loss with ties kept at the earliest
/// checkpoint, best parameters restored at the end.
pub(crate) fn run_training<T: Task>(task: &mut T, cfg: &TrainConfig) -> TrainResult<TrainOutcome> {
    let n = task.train_len();
    if n == 0 {
        return Err(TrainError::EmptyTrainingSet);
    }
    let (initial_val, initial_metric) = task.validate()?;
    let mut curve = vec![CurveRow {
        step: 0,
        split: "valid".into(),
        loss: initial_val,
        metric: initial_metric,
    }];
    let mut best_val = initial_val;
    let mut best_snap = task.snapshot();
    let mut best_metric = initial_metric;
    let mut patience_left = cfg.patience;
    let mut counter: u64 = 0;
    let mut batch_idx = 0usize;
    let mut batch_tags = Vec::new();
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e3779b9));
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            if let Some(tag) = task.batch_tag(batch_idx) {
                batch_tags.push(tag);
            }
            for idx in batch {
                epoch_loss += task.example_loss(*idx, batch_idx, counter)?;
                counter += 1;
            }
            task.apply_batch(batch.len())?;
            batch_idx += 1;
        }
        curve.push(CurveRow {
            step: epoch,
            split: "train".into(),
            loss: epoch_loss / n as f64,
            metric: 0.0,
        });

        if epoch % cfg.validate_every == 0 || epoch == cfg.epochs {
            let (val, metric) = task.validate()?;
            curve.push(CurveRow {
                step: epoch,
                split: "valid".into(),
                loss: val,
                metric,
            });
            if val < best_val {
                best_val = val;
                best_metric = metric;
                best_snap = task.snapshot();
                patience_left = cfg.patience;
            } else {
                patience_left = patience_left.saturating_sub(1);
                if patience_left == 0 {
                    break;
                }
            }
        }
    }
    task.restore(&best_snap);
    let mut final_metrics = BTreeMap::new();
    final_metrics.insert("val_loss".to_string(), best_val);
    final_metrics.insert("val_metric".to_string(), best_metric);
    Ok(TrainOutcome {
        curve,
        initial_val_loss: initial_val,
        best_val_loss: best_val,
        final_metrics,
        batch_tags,
    })
}

/// Bresenham-style deterministic interleave: the primary stream gets a
/// `mix` fraction of batches, front-loaded so mix = 0.5 yields primary on
/// even batch indices (bitext first, raw second).
pub(crate) fn interleave_primary(batch_idx: usize, mix: f64) -> bool {
    let before = ((batch_idx as f64 + 1.0) * mix).floor();
    let after = ((batch_idx as f64 + 2.0) * mix).floor();
    after > before
}
