use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::bleu::{bleu, BleuReport};
use super::{EvalError, EvalResult};

/// Deterministic unit → token rendering: the stand-in for unit-to-waveform
/// synthesis followed by ASR transcription. A bijection onto a subset of
/// the pivot vocabulary, so the evaluation layer adds no measurement noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocoderTable {
    map: BTreeMap<u32, String>,
}

impl VocoderTable {
    /// Validates coverage of all `k` units and injectivity.
    pub fn new(map: BTreeMap<u32, String>, k: usize) -> EvalResult<Self> {
        if map.len() != k {
            return Err(EvalError::BadVocoderTable {
                reason: format!("{} entries for {} units", map.len(), k),
            });
        }
        for unit in 0..k as u32 {
            if !map.contains_key(&unit) {
                return Err(EvalError::BadVocoderTable {
                    reason: format!("unit {unit} uncovered"),
                });
            }
        }
        let distinct: BTreeSet<&String> = map.values().collect();
        if distinct.len() != map.len() {
            return Err(EvalError::BadVocoderTable {
                reason: "duplicate output token".to_string(),
            });
        }
        Ok(Self { map })
    }

    pub fn k(&self) -> usize {
        self.map.len()
    }

    pub fn token(&self, unit: u32) -> Option<&str> {
        self.map.get(&unit).map(|s| s.as_str())
    }
}

/// Tokenwise lookup of a normalized unit sequence. Length-preserving and
/// injective; duplicate-containing input is rejected per the normalization
/// precondition.
pub fn vocode(units: &[u32], table: &VocoderTable) -> EvalResult<Vec<String>> {
    if let Some(pos) = units.windows(2).position(|w| w[0] == w[1]) {
        return Err(EvalError::UnnormalizedUnits { position: pos + 1 });
    }
    units
        .iter()
        .map(|u| {
            table
                .token(*u)
                .map(|s| s.to_string())
                .ok_or(EvalError::UnknownUnit {
                    unit: *u,
                    k: table.k(),
                })
        })
        .collect()
}

/// BLEU of vocoded unit hypotheses against pivot reference text: the
/// deterministic analog of transcribing output speech with an ASR system
/// and scoring the transcript.
pub fn eval_speech_output(
    unit_hypotheses: &[Vec<u32>],
    references: &[Vec<String>],
    table: &VocoderTable,
) -> EvalResult<BleuReport> {
    let rendered: Vec<Vec<String>> = unit_hypotheses
        .iter()
        .map(|units| vocode(units, table))
        .collect::<EvalResult<_>>()?;
    let mut report = bleu(&rendered, references)?;
    report.decoding = "greedy+vocode".to_string();
    Ok(report)
}
