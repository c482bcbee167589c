use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::eval::BleuReport;
use crate::space::DistanceReport;

/// One evaluated (encoder, decoder) pair, in the shape compose-eval emits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairReport {
    pub src: String,
    pub tgt: String,
    pub modality: String,
    pub zero_shot: bool,
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub bp: f64,
    pub decoding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_length: Option<ByLengthSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ByLengthSummary {
    pub bleu: Vec<Option<f64>>,
    pub pair_counts: [usize; 4],
}

impl PairReport {
    pub fn from_bleu(
        src: &str,
        tgt: &str,
        modality: &str,
        zero_shot: bool,
        report: &BleuReport,
    ) -> Self {
        Self {
            src: src.to_string(),
            tgt: tgt.to_string(),
            modality: modality.to_string(),
            zero_shot,
            bleu: report.bleu,
            precisions: report.precisions,
            bp: report.brevity_penalty,
            decoding: report.decoding.clone(),
            by_length: None,
        }
    }

    /// Flat CSV row matching the JSON fields.
    pub fn csv_row(&self, pair: &str) -> String {
        format!(
            "{pair},{},{},{},{},{},{},{},{},{},{}",
            self.src,
            self.tgt,
            self.modality,
            self.zero_shot,
            self.bleu,
            self.precisions[0],
            self.precisions[1],
            self.precisions[2],
            self.precisions[3],
            self.bp
        )
    }
}

pub const PAIR_CSV_HEADER: &str =
    "pair,src,tgt,modality,zero_shot,bleu,p1,p2,p3,p4,bp";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudentMetrics {
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderMetrics {
    pub val_loss: f64,
    pub val_token_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub students: BTreeMap<String, StudentMetrics>,
    pub decoders: BTreeMap<String, DecoderMetrics>,
    pub speech_students: BTreeMap<String, StudentMetrics>,
    pub unit_decoders: BTreeMap<String, DecoderMetrics>,
    /// Text-to-text pairs keyed "src->tgt/objective".
    pub t2t: BTreeMap<String, PairReport>,
    /// Speech-to-text pairs keyed "lang-frames->tgt/objective/teacher_mode".
    pub s2t: BTreeMap<String, PairReport>,
    /// Speech-to-speech via the unit decoder + vocoder.
    pub s2s: BTreeMap<String, PairReport>,
    /// Distances to pivot embeddings, trained vs untrained students.
    pub distances_trained: DistanceReport,
    pub distances_untrained: DistanceReport,
    /// Data-flow audit of the raw-frames unit decoder.
    pub unit_decoder_input_kinds: Vec<String>,
    pub unit_decoder_target_kinds: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherSection {
    pub val_loss: f64,
    pub val_token_accuracy: f64,
}

/// The consolidated suite report. Byte-identical across runs of the same
/// config + seeds: no timestamps, ordered maps, exact float round trips.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config_hash: String,
    pub corpus_hash: String,
    pub seeds: Vec<u64>,
    pub decoding_strategy: String,
    pub teacher: TeacherSection,
    pub per_seed: BTreeMap<String, SeedReport>,
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV export of every evaluated pair across seeds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(PAIR_CSV_HEADER);
        out.push_str(",seed\n");
        for (seed, report) in &self.per_seed {
            for (pair, pr) in report
                .t2t
                .iter()
                .chain(report.s2t.iter())
                .chain(report.s2s.iter())
            {
                out.push_str(&pr.csv_row(pair));
                out.push(',');
                out.push_str(seed);
                out.push('\n');
            }
        }
        out
    }
}
