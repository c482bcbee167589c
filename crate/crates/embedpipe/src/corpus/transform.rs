use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusResult, LangId};
use crate::models::Vocabulary;

const AFFIXES: &[&str] = &["ka", "ro", "mi", "zu", "ta", "ne"];
/// One token in four is split into a two-piece surface form.
const SPLIT_MOD: u64 = 4;

/// A single invertible sentence transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// Seeded bijection over the vocabulary (token substitution cipher).
    Permute { seed: u64 },
    /// Reverse each consecutive window of `window` tokens.
    ReverseWindow { window: usize },
    /// Append a seeded suffix to every token.
    Affix { seed: u64 },
    /// Split a seeded quarter of tokens into two surface pieces.
    Split { seed: u64 },
}

/// A derived ("cipher") language: a composition of invertible transforms
/// applied to the pivot. Transform depth stands in for linguistic distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub id: LangId,
    #[serde(default)]
    pub transforms: Vec<Transform>,
}

impl LanguageSpec {
    pub fn identity(id: &str) -> Self {
        Self {
            id: id.to_string(),
            transforms: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.transforms.is_empty()
    }
}

fn fnv(seed: u64, s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

enum Step {
    /// token → token, with inverse.
    Map {
        fwd: BTreeMap<String, String>,
        inv: BTreeMap<String, String>,
    },
    /// token → two tokens for a subset, with inverse pair map.
    Split {
        fwd: BTreeMap<String, (String, String)>,
        inv: BTreeMap<(String, String), String>,
    },
    Reverse {
        window: usize,
    },
}

/// A [`LanguageSpec`] compiled against a source vocabulary. Construction
/// verifies invertibility (injective token maps, unambiguous split pieces)
/// and derives the output vocabulary.
pub struct CompiledLanguage {
    pub spec: LanguageSpec,
    steps: Vec<Step>,
    vocab: Vocabulary,
}

impl LanguageSpec {
    /// Compile against the source (pivot) vocabulary, rejecting any
    /// non-invertible composition.
    pub fn compile(&self, source: &Vocabulary) -> CorpusResult<CompiledLanguage> {
        let mut tokens: Vec<String> = source.content_tokens().map(|s| s.to_string()).collect();
        let mut steps = Vec::new();
        for t in &self.transforms {
            match t {
                Transform::Permute { seed } => {
                    let mut targets = tokens.clone();
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    targets.shuffle(&mut rng);
                    let step = build_map(&self.id, &tokens, &targets)?;
                    tokens = targets;
                    steps.push(step);
                }
                Transform::Affix { seed } => {
                    let targets: Vec<String> = tokens
                        .iter()
                        .map(|tok| {
                            let suffix = AFFIXES[(fnv(*seed, tok) % AFFIXES.len() as u64) as usize];
                            format!("{tok}_{suffix}")
                        })
                        .collect();
                    let step = build_map(&self.id, &tokens, &targets)?;
                    tokens = targets;
                    steps.push(step);
                }
                Transform::Split { seed } => {
                    let mut fwd = BTreeMap::new();
                    let mut inv = BTreeMap::new();
                    let mut next = Vec::new();
                    for tok in &tokens {
                        if fnv(*seed, tok) % SPLIT_MOD == 0 {
                            let a = format!("{tok}@a");
                            let b = format!("{tok}@b");
                            fwd.insert(tok.clone(), (a.clone(), b.clone()));
                            inv.insert((a.clone(), b.clone()), tok.clone());
                            next.push(a);
                            next.push(b);
                        } else {
                            next.push(tok.clone());
                        }
                    }
                    // Split pieces must not collide with surviving tokens.
                    let mut seen = std::collections::BTreeSet::new();
                    for tok in &next {
                        if !seen.insert(tok.clone()) {
                            return Err(CorpusError::NotInvertible {
                                id: self.id.clone(),
                                reason: format!("split piece collides on {tok:?}"),
                            });
                        }
                    }
                    tokens = next;
                    steps.push(Step::Split { fwd, inv });
                }
                Transform::ReverseWindow { window } => {
                    if *window == 0 {
                        return Err(CorpusError::NotInvertible {
                            id: self.id.clone(),
                            reason: "reverse window must be >= 1".into(),
                        });
                    }
                    steps.push(Step::Reverse { window: *window });
                }
            }
        }
        let vocab = Vocabulary::new(tokens).map_err(|e| CorpusError::NotInvertible {
            id: self.id.clone(),
            reason: e.to_string(),
        })?;
        Ok(CompiledLanguage {
            spec: self.clone(),
            steps,
            vocab,
        })
    }

}

fn build_map(id: &str, from: &[String], to: &[String]) -> CorpusResult<Step> {
    let mut fwd = BTreeMap::new();
    let mut inv = BTreeMap::new();
    for (a, b) in from.iter().zip(to) {
        fwd.insert(a.clone(), b.clone());
        if inv.insert(b.clone(), a.clone()).is_some() {
            return Err(CorpusError::NotInvertible {
                id: id.to_string(),
                reason: format!("token map collides on {b:?}"),
            });
        }
    }
    Ok(Step::Map { fwd, inv })
}

fn reverse_windows(tokens: &[String], window: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    for chunk in tokens.chunks(window) {
        out.extend(chunk.iter().rev().cloned());
    }
    out
}

impl CompiledLanguage {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn apply(&self, sentence: &[String]) -> CorpusResult<Vec<String>> {
        let mut toks: Vec<String> = sentence.to_vec();
        for step in &self.steps {
            toks = match step {
                Step::Map { fwd, .. } => toks
                    .iter()
                    .map(|t| {
                        fwd.get(t).cloned().ok_or_else(|| CorpusError::UnknownToken {
                            token: t.clone(),
                            lang: self.spec.id.clone(),
                        })
                    })
                    .collect::<CorpusResult<_>>()?,
                Step::Split { fwd, .. } => {
                    let mut next = Vec::with_capacity(toks.len() * 2);
                    for t in toks {
                        match fwd.get(&t) {
                            Some((a, b)) => {
                                next.push(a.clone());
                                next.push(b.clone());
                            }
                            None => next.push(t),
                        }
                    }
                    next
                }
                Step::Reverse { window } => reverse_windows(&toks, *window),
            };
        }
        Ok(toks)
    }

    /// Exact inverse of [`CompiledLanguage::apply`].
    pub fn invert(&self, sentence: &[String]) -> CorpusResult<Vec<String>> {
        let mut toks: Vec<String> = sentence.to_vec();
        for step in self.steps.iter().rev() {
            toks = match step {
                Step::Map { inv, .. } => toks
                    .iter()
                    .map(|t| {
                        inv.get(t).cloned().ok_or_else(|| CorpusError::UnknownToken {
                            token: t.clone(),
                            lang: self.spec.id.clone(),
                        })
                    })
                    .collect::<CorpusResult<_>>()?,
                Step::Split { inv, .. } => {
                    let mut next = Vec::with_capacity(toks.len());
                    let mut i = 0;
                    while i < toks.len() {
                        if i + 1 < toks.len() {
                            if let Some(orig) =
                                inv.get(&(toks[i].clone(), toks[i + 1].clone()))
                            {
                                next.push(orig.clone());
                                i += 2;
                                continue;
                            }
                        }
                        next.push(toks[i].clone());
                        i += 1;
                    }
                    next
                }
                Step::Reverse { window } => reverse_windows(&toks, *window),
            };
        }
        Ok(toks)
    }
}
