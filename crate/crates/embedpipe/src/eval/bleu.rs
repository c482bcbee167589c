use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalResult};
use crate::corpus::LENGTH_BUCKETS;

const MAX_N: usize = 4;

/// Corpus-level BLEU-4, uniform weights, single reference per hypothesis.
///
/// Pinned formula: clipped n-gram matches; add-one smoothing on numerator
/// and denominator for n ≥ 2 only; brevity penalty exp(1 − r/c) when the
/// hypothesis side is shorter. An all-empty hypothesis corpus scores 0
/// with `brevity_penalty` 0 flagged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_tokens: usize,
    pub ref_tokens: usize,
    pub decoding: String,
}

pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> EvalResult<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::CountMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    let mut matches = [0usize; MAX_N];
    let mut totals = [0usize; MAX_N];
    let mut hyp_tokens = 0usize;
    let mut ref_tokens = 0usize;
    for (hyp, rf) in hypotheses.iter().zip(references) {
        hyp_tokens += hyp.len();
        ref_tokens += rf.len();
        for n in 1..=MAX_N {
            if hyp.len() < n {
                continue;
            }
            totals[n - 1] += hyp.len() - n + 1;
            let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
            if rf.len() >= n {
                for gram in rf.windows(n) {
                    *ref_counts.entry(gram).or_insert(0) += 1;
                }
            }
            let mut hyp_counts: HashMap<&[String], usize> = HashMap::new();
            for gram in hyp.windows(n) {
                *hyp_counts.entry(gram).or_insert(0) += 1;
            }
            for (gram, count) in hyp_counts {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matches[n - 1] += count.min(clip);
            }
        }
    }

    let mut precisions = [0.0f64; 4];
    for n in 1..=MAX_N {
        let (m, t) = (matches[n - 1] as f64, totals[n - 1] as f64);
        precisions[n - 1] = if n == 1 {
            if t > 0.0 {
                m / t
            } else {
                0.0
            }
        } else {
            (m + 1.0) / (t + 1.0)
        };
    }

    let brevity_penalty = if hyp_tokens == 0 {
        0.0
    } else if hyp_tokens < ref_tokens {
        (1.0 - ref_tokens as f64 / hyp_tokens as f64).exp()
    } else {
        1.0
    };

    let bleu = if hyp_tokens == 0 || precisions[0] == 0.0 {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_N as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };

    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_tokens,
        ref_tokens,
        decoding: "greedy".to_string(),
    })
}

/// Per-bucket BLEU keyed on reference length; empty buckets are `None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ByLengthReport {
    pub buckets: Vec<Option<BleuReport>>,
    pub pair_counts: [usize; 4],
}

pub fn bleu_by_length(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
) -> EvalResult<ByLengthReport> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::CountMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    let mut buckets: Vec<(Vec<Vec<String>>, Vec<Vec<String>>)> = vec![Default::default(); 4];
    for (h, r) in hypotheses.iter().zip(references) {
        let b = bucket_index(r.len());
        buckets[b].0.push(h.clone());
        buckets[b].1.push(r.clone());
    }
    let mut out = Vec::with_capacity(4);
    let mut pair_counts = [0usize; 4];
    for (i, (hs, rs)) in buckets.iter().enumerate() {
        pair_counts[i] = hs.len();
        if hs.is_empty() {
            out.push(None);
        } else {
            out.push(Some(bleu(hs, rs)?));
        }
    }
    Ok(ByLengthReport {
        buckets: out,
        pair_counts,
    })
}

fn bucket_index(len: usize) -> usize {
    for (i, (lo, hi)) in LENGTH_BUCKETS.iter().enumerate() {
        if len >= *lo && len <= *hi {
            return i;
        }
    }
    LENGTH_BUCKETS.len() - 1
}
