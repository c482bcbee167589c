use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusResult, LangId};
use crate::models::Vocabulary;

pub const FRAME_JITTER_SIGMA: f64 = 0.1;
const FRAMES_PER_TOKEN: (u64, u64) = (2, 5);
/// Prototype components are N(0, 3²): wide spacing keeps every token blob
/// separable by k-means (pairwise distances ≫ jitter) for any seed.
const PROTO_SCALE: f64 = 3.0;

/// Renders token sequences into variable-length frame sequences: each token
/// expands to 2–5 frames around a fixed per-token prototype vector, plus
/// Gaussian jitter. The synthetic stand-in for a speech signal.
pub struct FrameSynthesizer {
    pub lang: LangId,
    pub f: usize,
    pub sigma: f64,
    vocab: Vocabulary,
    protos: Vec<Vec<f64>>,
}

impl FrameSynthesizer {
    /// Prototypes are drawn once from `proto_seed` and frozen.
    pub fn new(lang: &str, vocab: Vocabulary, f: usize, proto_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(proto_seed);
        let protos = (0..vocab.len())
            .map(|_| {
                (0..f)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        PROTO_SCALE * z
                    })
                    .collect()
            })
            .collect();
        Self {
            lang: lang.to_string(),
            f,
            sigma: FRAME_JITTER_SIGMA,
            vocab,
            protos,
        }
    }

    pub fn prototype(&self, token: &str) -> &[f64] {
        &self.protos[self.vocab.id_of(token) as usize]
    }

    /// Bit-identical for the same (sentence, seed).
    pub fn synth_frames(&self, sentence: &[String], seed: u64) -> CorpusResult<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(sentence_stream(sentence));
        let mut frames = Vec::new();
        for tok in sentence {
            if !self.vocab.contains(tok) {
                return Err(CorpusError::UnknownToken {
                    token: tok.clone(),
                    lang: self.lang.clone(),
                });
            }
            let proto = self.prototype(tok);
            let k = rng.gen_range(FRAMES_PER_TOKEN.0..=FRAMES_PER_TOKEN.1);
            for _ in 0..k {
                frames.push(
                    proto
                        .iter()
                        .map(|p| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            p + self.sigma * z
                        })
                        .collect(),
                );
            }
        }
        Ok(frames)
    }
}

fn sentence_stream(sentence: &[String]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for tok in sentence {
        for b in tok.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// K centroids over frame space, fit unsupervisedly on pivot training
/// frames; assignment is the discrete-unit extraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitCodebook {
    pub centroids: Vec<Vec<f64>>,
}

const KMEANS_ITERS: usize = 20;

impl UnitCodebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map(|c| c.len()).unwrap_or(0)
    }

    /// Lloyd's algorithm with seeded greedy k-means++ init (several
    /// candidates per step, keep the one that lowers the potential most),
    /// 20 iterations. Empty clusters reseed to the frame farthest from its
    /// assigned centroid, keeping the run deterministic.
    pub fn fit(frames: &[Vec<f64>], k: usize, seed: u64) -> Self {
        assert!(!frames.is_empty() && k >= 1);
        let f = frames[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trials = 2 + (k as f64).ln().ceil() as usize;
        let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
        centroids.push(frames[rng.gen_range(0..frames.len())].clone());
        let mut d2: Vec<f64> = frames
            .iter()
            .map(|x| dist_sq(x, &centroids[0]))
            .collect();
        while centroids.len() < k {
            let total: f64 = d2.iter().sum();
            let mut best: Option<(f64, usize)> = None;
            for _ in 0..trials {
                let pick = if total <= 0.0 {
                    rng.gen_range(0..frames.len())
                } else {
                    let mut roll = rng.gen_range(0.0..total);
                    let mut pick = frames.len() - 1;
                    for (i, w) in d2.iter().enumerate() {
                        if roll < *w {
                            pick = i;
                            break;
                        }
                        roll -= w;
                    }
                    pick
                };
                let potential: f64 = frames
                    .iter()
                    .zip(&d2)
                    .map(|(x, d)| d.min(dist_sq(x, &frames[pick])))
                    .sum();
                if best.map(|(p, _)| potential < p).unwrap_or(true) {
                    best = Some((potential, pick));
                }
            }
            let next = frames[best.unwrap().1].clone();
            for (i, x) in frames.iter().enumerate() {
                d2[i] = d2[i].min(dist_sq(x, &next));
            }
            centroids.push(next);
        }

        let mut book = Self { centroids };
        for _ in 0..KMEANS_ITERS {
            let mut sums = vec![vec![0.0; f]; k];
            let mut counts = vec![0usize; k];
            let mut assigned = Vec::with_capacity(frames.len());
            for x in frames {
                let a = book.assign(x).unwrap() as usize;
                assigned.push(a);
                counts[a] += 1;
                for (s, v) in sums[a].iter_mut().zip(x) {
                    *s += v;
                }
            }
            for (c, (sum, count)) in book.centroids.iter_mut().zip(sums.iter().zip(&counts)) {
                if *count > 0 {
                    for (ci, si) in c.iter_mut().zip(sum) {
                        *ci = si / *count as f64;
                    }
                }
            }
            for empty in 0..k {
                if counts[empty] > 0 {
                    continue;
                }
                let farthest = frames
                    .iter()
                    .zip(&assigned)
                    .enumerate()
                    .max_by(|(_, (x, a)), (_, (y, b))| {
                        let dx = dist_sq(x, &book.centroids[**a]);
                        let dy = dist_sq(y, &book.centroids[**b]);
                        dx.partial_cmp(&dy).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                book.centroids[empty] = frames[farthest].clone();
            }
        }
        book
    }

    /// Nearest centroid; ties resolve to the lowest index.
    pub fn assign(&self, frame: &[f64]) -> CorpusResult<u32> {
        if frame.len() != self.dim() {
            return Err(CorpusError::FrameDimMismatch {
                got: frame.len(),
                expected: self.dim(),
            });
        }
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = dist_sq(frame, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(best as u32)
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unit sequence of a frame sequence (raw: consecutive duplicates kept).
pub fn extract_units(frames: &[Vec<f64>], codebook: &UnitCodebook) -> CorpusResult<Vec<u32>> {
    frames.iter().map(|f| codebook.assign(f)).collect()
}

/// Collapse consecutive duplicate units. Idempotent; a nonempty input
/// always keeps at least one unit.
pub fn normalize_units(units: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(units.len());
    for u in units {
        if out.last() != Some(u) {
            out.push(*u);
        }
    }
    out
}
