//! The shared embedding space: distillation losses, multiplicative noise,
//! and cross-lingual distance statistics.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("embedding dimension mismatch: {lhs} vs {rhs}")]
    DimensionMismatch { lhs: usize, rhs: usize },
    #[error("cosine loss undefined for a zero vector")]
    ZeroVector,
    #[error("language {language}: missing pivot alignment at sentence index {index}")]
    MissingAlignment { language: String, index: usize },
}

/// Where an embedding came from; drives zero-shot bookkeeping in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub encoder_id: String,
    pub input_hash: u64,
}

/// A point in the shared D-dimensional interchange space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEmbedding {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl SentenceEmbedding {
    pub fn new(values: Vec<f64>, encoder_id: &str, input_hash: u64) -> Self {
        Self {
            values,
            provenance: Provenance {
                encoder_id: encoder_id.to_string(),
                input_hash,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// How α in the multiplicative noise model is interpreted. The default reads
/// α as a per-dimension standard deviation, which gives the closed-form
/// expected distortion α²‖x‖².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    PerDimStd,
    PerDimVar,
    ScalarStd,
}

/// Multiplicative Gaussian noise: out_i = x_i · (1 + ε_i).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub alpha: f64,
    #[serde(default)]
    pub mode: NoiseMode,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(alpha: f64, seed: u64) -> Self {
        assert!(alpha >= 0.0, "alpha must be non-negative");
        Self {
            alpha,
            mode: NoiseMode::default(),
            seed,
        }
    }

    /// RNG stream for one perturb call. Streams are keyed by call index so
    /// parallel callers stay reproducible.
    pub fn stream(&self, call_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(call_index);
        rng
    }
}

/// Mean squared error over dimensions. L2² distance = D · mse.
pub fn mse_loss(a: &[f64], b: &[f64]) -> Result<f64, SpaceError> {
    if a.len() != b.len() {
        return Err(SpaceError::DimensionMismatch {
            lhs: a.len(),
            rhs: b.len(),
        });
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Summed-squares L2² distance (D · mse).
pub fn l2_sq(a: &[f64], b: &[f64]) -> Result<f64, SpaceError> {
    Ok(mse_loss(a, b)? * a.len() as f64)
}

/// 1 − cos(a, b), in [0, 2].
pub fn cosine_loss(a: &[f64], b: &[f64]) -> Result<f64, SpaceError> {
    if a.len() != b.len() {
        return Err(SpaceError::DimensionMismatch {
            lhs: a.len(),
            rhs: b.len(),
        });
    }
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SpaceError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(1.0 - dot / (na * nb))
}

/// Perturb an embedding with multiplicative Gaussian noise drawn from the
/// spec's stream for `call_index`. α = 0 is the exact identity.
pub fn perturb(x: &SentenceEmbedding, spec: &NoiseSpec, call_index: u64) -> SentenceEmbedding {
    let mut rng = spec.stream(call_index);
    let mut out = x.clone();
    perturb_values(&mut out.values, spec, &mut rng);
    out
}

/// In-place variant against a caller-managed RNG (training inner loop).
pub fn perturb_values(values: &mut [f64], spec: &NoiseSpec, rng: &mut ChaCha8Rng) {
    match spec.mode {
        NoiseMode::PerDimStd => {
            for v in values.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v *= 1.0 + spec.alpha * z;
            }
        }
        NoiseMode::PerDimVar => {
            let std = spec.alpha.sqrt();
            for v in values.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v *= 1.0 + std * z;
            }
        }
        NoiseMode::ScalarStd => {
            let z: f64 = StandardNormal.sample(rng);
            let f = 1.0 + spec.alpha * z;
            for v in values.iter_mut() {
                *v *= f;
            }
        }
    }
}

/// Closed-form E‖perturb(x) − x‖² = α²‖x‖² under the std interpretations
/// (for `per_dim_var` the expectation is α‖x‖² instead).
pub fn expected_distortion(x: &[f64], alpha: f64) -> f64 {
    alpha * alpha * x.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean_l2sq: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    /// [lo, hi, count] rows covering [0, max] in equal widths.
    pub histogram: Vec<(f64, f64, usize)>,
}

pub type DistanceReport = BTreeMap<String, DistanceStats>;

const HISTOGRAM_BINS: usize = 10;

/// Per-language statistics of L2² distances to aligned pivot embeddings.
/// Inputs are index-aligned; a shorter list is reported as a missing
/// alignment at its first absent index.
pub fn distance_report(
    per_language: &BTreeMap<String, Vec<SentenceEmbedding>>,
    pivot: &[SentenceEmbedding],
) -> Result<DistanceReport, SpaceError> {
    let mut report = DistanceReport::new();
    for (lang, embs) in per_language {
        if embs.len() != pivot.len() {
            return Err(SpaceError::MissingAlignment {
                language: lang.clone(),
                index: embs.len().min(pivot.len()),
            });
        }
        let mut dists = Vec::with_capacity(embs.len());
        for (e, p) in embs.iter().zip(pivot) {
            dists.push(l2_sq(&e.values, &p.values)?);
        }
        report.insert(lang.clone(), summarize(&dists));
    }
    Ok(report)
}

fn summarize(dists: &[f64]) -> DistanceStats {
    let mut sorted = dists.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let pct = |p: f64| -> f64 {
        let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
        sorted[idx]
    };
    let max = *sorted.last().unwrap();
    let width = if max > 0.0 { max / HISTOGRAM_BINS as f64 } else { 1.0 };
    let mut histogram = Vec::with_capacity(HISTOGRAM_BINS);
    for b in 0..HISTOGRAM_BINS {
        let lo = b as f64 * width;
        let hi = lo + width;
        let count = sorted
            .iter()
            .filter(|d| **d >= lo && (**d < hi || (b == HISTOGRAM_BINS - 1 && **d <= hi)))
            .count();
        histogram.push((lo, hi, count));
    }
    DistanceStats {
        mean_l2sq: mean,
        p10: pct(0.1),
        p50: pct(0.5),
        p90: pct(0.9),
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mse_identity_and_direct_definition() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5);
        assert!(mse_loss(&[0.0], &[0.0, 1.0]).is_err());
    }

    /// Naive-loop oracle for the D=64 case.
    #[test]
    fn mse_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut naive = 0.0;
        for i in 0..64 {
            let d = a[i] - b[i];
            naive += d * d;
        }
        naive /= 64.0;
        assert!((mse_loss(&a, &b).unwrap() - naive).abs() < 1e-15);
    }

    #[test]
    fn cosine_identity_orthogonal_antipodal() {
        assert!(cosine_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().abs() < 1e-12);
        assert!((cosine_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_loss(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            cosine_loss(&[0.0, 0.0], &[1.0, 0.0]),
            Err(SpaceError::ZeroVector)
        ));
    }

    #[test]
    fn perturb_alpha_zero_is_identity() {
        let x = SentenceEmbedding::new(vec![0.4, -1.2, 3.0], "t", 0);
        let spec = NoiseSpec::new(0.0, 123);
        assert_eq!(perturb(&x, &spec, 0).values, x.values);
    }

    #[test]
    fn perturb_fixes_zero_vector() {
        let x = SentenceEmbedding::new(vec![0.0; 8], "t", 0);
        let spec = NoiseSpec::new(0.5, 9);
        assert_eq!(perturb(&x, &spec, 3).values, vec![0.0; 8]);
    }

    #[test]
    fn perturb_is_reproducible_per_call_index() {
        let x = SentenceEmbedding::new(vec![1.0, -2.0, 0.5], "t", 0);
        let spec = NoiseSpec::new(0.25, 77);
        assert_eq!(perturb(&x, &spec, 4).values, perturb(&x, &spec, 4).values);
        assert_ne!(perturb(&x, &spec, 4).values, perturb(&x, &spec, 5).values);
    }

    /// Monte-Carlo oracle for the analytic distortion law on [1, 1], α=0.25.
    #[test]
    fn monte_carlo_distortion_matches_expected() {
        let x = SentenceEmbedding::new(vec![1.0, 1.0], "t", 0);
        let spec = NoiseSpec::new(0.25, 2024);
        let draws = 1_000_000u64;
        let mut acc = 0.0;
        for i in 0..draws {
            let y = perturb(&x, &spec, i);
            acc += y
                .values
                .iter()
                .zip(&x.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let mc = acc / draws as f64;
        let expect = expected_distortion(&x.values, 0.25);
        assert!((expect - 0.125).abs() < 1e-15);
        assert!(
            (mc - expect).abs() / expect < 0.01,
            "mc {mc} vs analytic {expect}"
        );
    }

    #[test]
    fn expected_distortion_closed_form() {
        assert_eq!(expected_distortion(&[3.0, 4.0], 0.0), 0.0);
        assert!((expected_distortion(&[1.0, 1.0], 0.25) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn per_dim_var_mode_distortion_is_alpha_norm_sq() {
        let x = SentenceEmbedding::new(vec![1.0, 1.0], "t", 0);
        let spec = NoiseSpec {
            alpha: 0.25,
            mode: NoiseMode::PerDimVar,
            seed: 5,
        };
        let draws = 200_000u64;
        let mut acc = 0.0;
        for i in 0..draws {
            let y = perturb(&x, &spec, i);
            acc += y
                .values
                .iter()
                .zip(&x.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let mc = acc / draws as f64;
        let expect = 0.25 * x.norm_sq();
        assert!((mc - expect).abs() / expect < 0.05, "mc {mc} vs {expect}");
    }

    #[test]
    fn distance_report_zero_for_pivot_and_counts_rows() {
        let pivot: Vec<SentenceEmbedding> = (0..5)
            .map(|i| SentenceEmbedding::new(vec![i as f64, 1.0], "t", i))
            .collect();
        let mut langs = BTreeMap::new();
        langs.insert("L0".to_string(), pivot.clone());
        langs.insert(
            "L1".to_string(),
            pivot
                .iter()
                .map(|e| {
                    SentenceEmbedding::new(
                        e.values.iter().map(|v| v + 1.0).collect(),
                        "s",
                        0,
                    )
                })
                .collect(),
        );
        let report = distance_report(&langs, &pivot).unwrap();
        assert_eq!(report.len(), 2);
        assert_eq!(report["L0"].mean_l2sq, 0.0);
        assert!((report["L1"].mean_l2sq - 2.0).abs() < 1e-12);
        let total: usize = report["L1"].histogram.iter().map(|h| h.2).sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn distance_report_misalignment_names_index() {
        let pivot: Vec<SentenceEmbedding> = (0..3)
            .map(|i| SentenceEmbedding::new(vec![i as f64], "t", i))
            .collect();
        let mut langs = BTreeMap::new();
        langs.insert("L1".to_string(), pivot[..2].to_vec());
        let err = distance_report(&langs, &pivot).unwrap_err();
        assert!(err.to_string().contains("index 2"), "{err}");
    }

    proptest! {
        #[test]
        fn mse_symmetric_nonneg_zero_iff_equal(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..32),
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = mse_loss(&a, &b).unwrap();
            let ba = mse_loss(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            if a == b {
                prop_assert_eq!(ab, 0.0);
            } else {
                prop_assert!(ab > 0.0);
            }
        }

        #[test]
        fn l2sq_equals_d_times_mse(
            a in proptest::collection::vec(-10.0f64..10.0, 4..64),
        ) {
            let b: Vec<f64> = a.iter().map(|v| v * 0.5 + 0.1).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            let via_mse = mse_loss(&a, &b).unwrap() * a.len() as f64;
            prop_assert!((naive - via_mse).abs() <= 1e-10);
        }
    }
}
