use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{ModelError, ModelResult};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
const MAX_SIZE: usize = 4096;

/// Bijective token ↔ id map with fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Build from content words; reserved tokens are prepended.
    pub fn new<I: IntoIterator<Item = String>>(words: I) -> ModelResult<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            index.insert(t.clone(), i as u32);
        }
        for w in words {
            if index.contains_key(&w) {
                return Err(ModelError::Vocab(format!("duplicate token {w:?}")));
            }
            index.insert(w.clone(), tokens.len() as u32);
            tokens.push(w);
        }
        if tokens.len() > MAX_SIZE {
            return Err(ModelError::Vocab(format!(
                "vocabulary size {} exceeds {}",
                tokens.len(),
                MAX_SIZE
            )));
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn content_len(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    pub fn id_of(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, words: &[String]) -> Vec<u32> {
        words.iter().map(|w| self.id_of(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|i| self.token(*i).to_string()).collect()
    }

    /// Content tokens in id order (reserved ids excluded).
    pub fn content_tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().skip(RESERVED.len()).map(|s| s.as_str())
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex_lower(&h.finalize())
    }
}

pub(crate) fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
