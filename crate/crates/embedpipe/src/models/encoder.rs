use serde::{Deserialize, Serialize};

use super::params::{ParamSlot, Params};
use super::vocab::Vocabulary;
use super::{hash_frames, hash_tokens, ModelError, ModelResult};
use crate::space::SentenceEmbedding;
use crate::tensor::{Graph, NodeId, Tensor};

/// How per-step states are reduced to one sentence embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Elementwise max over time (how the teacher space is pooled).
    #[default]
    Max,
    /// Output state at the first position.
    Bos,
}

struct GruSlots {
    wx: ParamSlot,
    uh: ParamSlot,
    b: ParamSlot,
}

impl GruSlots {
    fn register(params: &mut Params, prefix: &str, in_dim: usize, h: usize) -> Self {
        Self {
            wx: params.add_matrix(&format!("{prefix}.wx"), in_dim, 3 * h),
            uh: params.add_matrix(&format!("{prefix}.uh"), h, 3 * h),
            b: params.add_zeros(&format!("{prefix}.b"), &[3 * h]),
        }
    }
}

/// Bidirectional gated recurrent layer + position-wise feed-forward layer
/// + projection to the embedding dimension.
struct Trunk {
    fw: GruSlots,
    bw: GruSlots,
    ff_w: ParamSlot,
    ff_b: ParamSlot,
    out_w: ParamSlot,
    out_b: ParamSlot,
    h: usize,
}

impl Trunk {
    fn register(params: &mut Params, h: usize, d: usize) -> Self {
        Self {
            fw: GruSlots::register(params, "gru_fw", h, h),
            bw: GruSlots::register(params, "gru_bw", h, h),
            ff_w: params.add_matrix("ff.w", 2 * h, h),
            ff_b: params.add_zeros("ff.b", &[h]),
            out_w: params.add_matrix("out.w", h, d),
            out_b: params.add_zeros("out.b", &[d]),
            h,
        }
    }

    /// x: [T, H] → states [T, D].
    fn forward(&self, g: &mut Graph, leaves: &[NodeId], x: NodeId) -> ModelResult<NodeId> {
        let t_len = g.value(x).shape()[0];
        let h = self.h;
        let zeros = Tensor::zeros(&[h]);

        let run = |g: &mut Graph, slots: &GruSlots, reversed: bool| -> ModelResult<Vec<NodeId>> {
            let xg = g.matmul(x, leaves[slots.wx])?;
            let xg = g.add(xg, leaves[slots.b])?;
            let mut state = g.constant(&zeros)?;
            let mut states = vec![state; t_len];
            for i in 0..t_len {
                let t = if reversed { t_len - 1 - i } else { i };
                let xg_t = g.row(xg, t)?;
                state = g.gru_cell(xg_t, state, leaves[slots.uh])?;
                states[t] = state;
            }
            let _ = h;
            Ok(states)
        };

        let fw = run(g, &self.fw, false)?;
        let bw = run(g, &self.bw, true)?;
        let fw_mat = g.concat(&fw, 0)?;
        let bw_mat = g.concat(&bw, 0)?;
        let s = g.concat(&[fw_mat, bw_mat], 1)?;
        let f = g.matmul(s, leaves[self.ff_w])?;
        let f = g.add(f, leaves[self.ff_b])?;
        let f = g.relu(f)?;
        let out = g.matmul(f, leaves[self.out_w])?;
        Ok(g.add(out, leaves[self.out_b])?)
    }
}

fn pool(g: &mut Graph, states: NodeId, pooling: Pooling) -> ModelResult<NodeId> {
    Ok(match pooling {
        Pooling::Max => g.temporal_max_pool(states)?,
        Pooling::Bos => g.row(states, 0)?,
    })
}

/// Token-input encoder: embedding table + trunk + pooling.
pub struct SequenceEncoder {
    pub id: String,
    pub vocab: Vocabulary,
    pub h: usize,
    pub d: usize,
    pub pooling: Pooling,
    pub params: Params,
    embed: ParamSlot,
    trunk: Trunk,
}

impl SequenceEncoder {
    pub fn new(
        id: &str,
        vocab: Vocabulary,
        h: usize,
        d: usize,
        pooling: Pooling,
        seed: u64,
    ) -> Self {
        let mut params = Params::new(seed);
        let embed = params.add_embedding("embed", vocab.len(), h);
        let trunk = Trunk::register(&mut params, h, d);
        Self {
            id: id.to_string(),
            vocab,
            h,
            d,
            pooling,
            params,
            embed,
            trunk,
        }
    }

    /// Closed-form parameter count for the declared architecture.
    pub fn expected_param_values(vocab_len: usize, h: usize, d: usize) -> usize {
        vocab_len * h + 2 * (h * 3 * h + h * 3 * h + 3 * h) + 2 * h * h + h + h * d + d
    }

    /// Graph-building forward: (states [T, D], embedding [D]).
    pub fn encode_on(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        tokens: &[u32],
    ) -> ModelResult<(NodeId, NodeId)> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if let Some(bad) = tokens.iter().find(|t| **t as usize >= self.vocab.len()) {
            return Err(ModelError::TokenOutOfRange {
                id: *bad,
                size: self.vocab.len(),
            });
        }
        let x = g.embedding_lookup(leaves[self.embed], tokens)?;
        let states = self.trunk.forward(g, leaves, x)?;
        let emb = pool(g, states, self.pooling)?;
        Ok((states, emb))
    }

    /// Inference: per-step states and the pooled sentence embedding.
    pub fn encode(&self, tokens: &[u32]) -> ModelResult<(Vec<Vec<f64>>, SentenceEmbedding)> {
        let mut g = Graph::new();
        let leaves = self.params.bind(&mut g, false)?;
        let (states, emb) = self.encode_on(&mut g, &leaves, tokens)?;
        let d = self.d;
        let state_rows = g
            .value(states)
            .data()
            .chunks(d)
            .map(|c| c.to_vec())
            .collect();
        Ok((
            state_rows,
            SentenceEmbedding::new(
                g.value(emb).data().to_vec(),
                &self.id,
                hash_tokens(tokens),
            ),
        ))
    }

    pub fn embed_sentence(&self, tokens: &[u32]) -> ModelResult<SentenceEmbedding> {
        Ok(self.encode(tokens)?.1)
    }
}

/// Frame-input encoder: linear input projection + the same trunk; MAX pooled.
pub struct FrameEncoder {
    pub id: String,
    pub f: usize,
    pub h: usize,
    pub d: usize,
    pub params: Params,
    in_w: ParamSlot,
    in_b: ParamSlot,
    trunk: Trunk,
}

impl FrameEncoder {
    pub fn new(id: &str, f: usize, h: usize, d: usize, seed: u64) -> Self {
        let mut params = Params::new(seed);
        let in_w = params.add_matrix("in.w", f, h);
        let in_b = params.add_zeros("in.b", &[h]);
        let trunk = Trunk::register(&mut params, h, d);
        Self {
            id: id.to_string(),
            f,
            h,
            d,
            params,
            in_w,
            in_b,
            trunk,
        }
    }

    pub fn expected_param_values(f: usize, h: usize, d: usize) -> usize {
        f * h + h + 2 * (h * 3 * h + h * 3 * h + 3 * h) + 2 * h * h + h + h * d + d
    }

    pub fn encode_on(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        frames: &[Vec<f64>],
    ) -> ModelResult<NodeId> {
        if frames.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if let Some(bad) = frames.iter().find(|f| f.len() != self.f) {
            return Err(ModelError::FrameDimMismatch {
                got: bad.len(),
                expected: self.f,
            });
        }
        let flat: Vec<f64> = frames.iter().flatten().copied().collect();
        let x = g.constant(&Tensor::new(vec![frames.len(), self.f], flat)?)?;
        let x = g.matmul(x, leaves[self.in_w])?;
        let x = g.add(x, leaves[self.in_b])?;
        let states = self.trunk.forward(g, leaves, x)?;
        let emb = pool(g, states, Pooling::Max)?;
        Ok(emb)
    }

    pub fn encode(&self, frames: &[Vec<f64>]) -> ModelResult<SentenceEmbedding> {
        let mut g = Graph::new();
        let leaves = self.params.bind(&mut g, false)?;
        let emb = self.encode_on(&mut g, &leaves, frames)?;
        Ok(SentenceEmbedding::new(
            g.value(emb).data().to_vec(),
            &self.id,
            hash_frames(frames),
        ))
    }

    /// Encode only the first `len` frames; trailing padding is ignored, so
    /// the result is invariant to it.
    pub fn encode_prefix(
        &self,
        frames: &[Vec<f64>],
        len: usize,
    ) -> ModelResult<SentenceEmbedding> {
        if len == 0 || len > frames.len() {
            return Err(ModelError::EmptySequence);
        }
        self.encode(&frames[..len])
    }
}
