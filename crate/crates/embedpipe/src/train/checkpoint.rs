use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TrainError, TrainResult};
use crate::models::{Params, Pooling};

pub const CKPT_FORMAT: &str = "embedpipe-ckpt-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Teacher,
    TextEncoder,
    FrameEncoder,
    TextDecoder,
    UnitDecoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Speech,
}

/// Training provenance: enough to recompute zero-shot status and audit the
/// data flow of any run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceMeta {
    /// Encoder ids whose embeddings were consumed during training.
    pub encoders_seen: Vec<String>,
    /// Languages whose data entered the run in any form.
    pub languages_seen: Vec<String>,
    /// Data-flow audit of model inputs ("text", "frames", "embedding").
    pub input_kinds: Vec<String>,
    /// Data-flow audit of training targets ("text:L0", "units", "embedding:mse").
    pub target_kinds: Vec<String>,
    pub training_method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Header line of a checkpoint file. Serialized as a single JSON line with
/// fixed field order, followed by the named little-endian float32 arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub id: String,
    pub kind: ModuleKind,
    pub language: Option<String>,
    pub modality: Modality,
    pub d: usize,
    pub h: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<Pooling>,
    /// Content tokens of the module's vocabulary (reserved ids implied),
    /// so checkpoints reload without the generating corpus.
    pub vocab_tokens: Vec<String>,
    pub vocab_hash: String,
    pub seed: u64,
    pub config_hash: String,
    pub corpus_hash: String,
    pub provenance: ProvenanceMeta,
    pub metrics: BTreeMap<String, f64>,
    pub arrays: Vec<ArraySpec>,
    pub payload_sha256: String,
}

/// Write header + float32 arrays. Parameters are stored float32 (lossy,
/// documented); a reload therefore reproduces float32-exact values.
pub fn save_checkpoint(path: &Path, meta: &mut CheckpointMeta, params: &Params) -> TrainResult<()> {
    meta.format = CKPT_FORMAT.to_string();
    meta.arrays = params
        .iter_named()
        .map(|(name, t)| ArraySpec {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let mut payload = Vec::new();
    for (_, t) in params.iter_named() {
        for v in t.data() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let mut hasher = Sha256::new();
    hasher.update(&payload);
    meta.payload_sha256 = hex(&hasher.finalize());

    let mut out = Vec::new();
    serde_json::to_writer(&mut out, meta).map_err(TrainError::MetaEncode)?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Parse a checkpoint from raw bytes, verifying the payload hash. Public
/// so untrusted inputs can be exercised directly (fuzzing, registry scans).
pub fn parse_checkpoint(bytes: &[u8]) -> TrainResult<(CheckpointMeta, Vec<Vec<f32>>)> {
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or(TrainError::Corrupt("no header line"))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&bytes[..newline]).map_err(TrainError::MetaDecode)?;
    if meta.format != CKPT_FORMAT {
        return Err(TrainError::Corrupt("unknown format tag"));
    }
    let payload = &bytes[newline + 1..];
    let mut hasher = Sha256::new();
    hasher.update(payload);
    if hex(&hasher.finalize()) != meta.payload_sha256 {
        return Err(TrainError::VerifyFailed);
    }
    let mut arrays = Vec::with_capacity(meta.arrays.len());
    let mut offset = 0usize;
    for spec in &meta.arrays {
        let numel: usize = spec.shape.iter().product();
        let bytes_len = numel
            .checked_mul(4)
            .ok_or(TrainError::Corrupt("array too large"))?;
        if offset + bytes_len > payload.len() {
            return Err(TrainError::Corrupt("payload truncated"));
        }
        let mut data = Vec::with_capacity(numel);
        for chunk in payload[offset..offset + bytes_len].chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        arrays.push(data);
        offset += bytes_len;
    }
    if offset != payload.len() {
        return Err(TrainError::Corrupt("trailing payload bytes"));
    }
    Ok((meta, arrays))
}

pub fn load_checkpoint(path: &Path) -> TrainResult<(CheckpointMeta, Vec<Vec<f32>>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_checkpoint(&bytes)
}

/// Overwrite a model's parameters from checkpoint arrays; names and shapes
/// must line up with the declared architecture.
pub fn apply_arrays(params: &mut Params, meta: &CheckpointMeta, arrays: &[Vec<f32>]) -> TrainResult<()> {
    if meta.arrays.len() != params.len() {
        return Err(TrainError::Corrupt("array count mismatch"));
    }
    for (slot, (spec, data)) in meta.arrays.iter().zip(arrays).enumerate() {
        if params.name(slot) != spec.name || params.value(slot).shape() != &spec.shape[..] {
            return Err(TrainError::Corrupt("array name or shape mismatch"));
        }
        let widened: Vec<f64> = data.iter().map(|v| *v as f64).collect();
        params.set_value(
            slot,
            crate::tensor::Tensor::new(spec.shape.clone(), widened)
                .map_err(|_| TrainError::Corrupt("bad array shape"))?,
        );
    }
    Ok(())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
