use super::params::{ParamSlot, Params};
use super::vocab::{Vocabulary, BOS_ID, EOS_ID, PAD_ID};
use super::{ModelError, ModelResult};
use crate::tensor::{log_softmax_row, matmul_into, Graph, NodeId, Tensor};

/// Autoregressive decoder whose only view of the input is one D-vector,
/// held in a single-slot attention memory: the value projection of the
/// sentence embedding is read at every step (with one slot the attention
/// weight is identically 1). Per-step states never cross the bottleneck.
pub struct EmbeddingConditionedDecoder {
    pub id: String,
    pub vocab: Vocabulary,
    pub h: usize,
    pub d: usize,
    pub params: Params,
    embed: ParamSlot,
    cond_w: ParamSlot,
    cond_b: ParamSlot,
    gru_wx: ParamSlot,
    gru_uh: ParamSlot,
    gru_b: ParamSlot,
    out_w: ParamSlot,
    out_b: ParamSlot,
}

/// Reserved ids shared with token vocabularies when the decoder emits
/// discrete units.
pub const UNIT_RESERVED: usize = 4;

/// A decoder over a unit vocabulary (`u0`..`u{K-1}` plus reserved ids).
pub type UnitDecoder = EmbeddingConditionedDecoder;

impl EmbeddingConditionedDecoder {
    pub fn new(id: &str, vocab: Vocabulary, h: usize, d: usize, seed: u64) -> Self {
        let mut params = Params::new(seed);
        let v = vocab.len();
        let embed = params.add_embedding("embed", v, h);
        let cond_w = params.add_matrix("cond.w", d, h);
        let cond_b = params.add_zeros("cond.b", &[h]);
        let gru_wx = params.add_matrix("gru.wx", 2 * h, 3 * h);
        let gru_uh = params.add_matrix("gru.uh", h, 3 * h);
        let gru_b = params.add_zeros("gru.b", &[3 * h]);
        let out_w = params.add_matrix("out.w", 2 * h, v);
        let out_b = params.add_zeros("out.b", &[v]);
        Self {
            id: id.to_string(),
            vocab,
            h,
            d,
            params,
            embed,
            cond_w,
            cond_b,
            gru_wx,
            gru_uh,
            gru_b,
            out_w,
            out_b,
        }
    }

    /// Decoder over K discrete units: vocabulary u0..u{K-1} after the
    /// reserved ids, so unit k maps to vocabulary id k + 4.
    pub fn for_units(id: &str, k: usize, h: usize, d: usize, seed: u64) -> UnitDecoder {
        let vocab = Vocabulary::new((0..k).map(|i| format!("u{i}"))).unwrap();
        Self::new(id, vocab, h, d, seed)
    }

    pub fn expected_param_values(vocab_len: usize, h: usize, d: usize) -> usize {
        vocab_len * h
            + d * h
            + h
            + 2 * h * 3 * h
            + h * 3 * h
            + 3 * h
            + 2 * h * vocab_len
            + vocab_len
    }

    /// Value read of the single memory slot.
    fn condition(&self, g: &mut Graph, leaves: &[NodeId], emb: NodeId) -> ModelResult<NodeId> {
        let v = g.matmul(emb, leaves[self.cond_w])?;
        Ok(g.add(v, leaves[self.cond_b])?)
    }

    /// Teacher-forced pass: targets must be BOS … EOS (PAD allowed after
    /// EOS). Returns per-step logits [L-1, V] and the mean token CE loss
    /// excluding PAD positions.
    pub fn teacher_forced_on(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        emb: NodeId,
        targets: &[u32],
    ) -> ModelResult<(NodeId, NodeId)> {
        let content_end = targets
            .iter()
            .position(|t| *t == PAD_ID)
            .unwrap_or(targets.len());
        if content_end < 2
            || targets[0] != BOS_ID
            || targets[content_end - 1] != EOS_ID
            || targets[content_end..].iter().any(|t| *t != PAD_ID)
        {
            return Err(ModelError::MissingBosEos);
        }
        let steps = targets.len() - 1;
        let inputs = &targets[..steps];
        let expected = &targets[1..];

        let cond = self.condition(g, leaves, emb)?;
        let e = g.embedding_lookup(leaves[self.embed], inputs)?;
        let cond_rows = vec![cond; steps];
        let cond_mat = g.concat(&cond_rows, 0)?;
        let x = g.concat(&[e, cond_mat], 1)?;
        let xg = g.matmul(x, leaves[self.gru_wx])?;
        let xg = g.add(xg, leaves[self.gru_b])?;

        let mut state = g.constant(&Tensor::zeros(&[self.h]))?;
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xg_t = g.row(xg, t)?;
            state = g.gru_cell(xg_t, state, leaves[self.gru_uh])?;
            hs.push(state);
        }
        let h_mat = g.concat(&hs, 0)?;
        let out_in = g.concat(&[h_mat, cond_mat], 1)?;
        let logits = g.matmul(out_in, leaves[self.out_w])?;
        let logits = g.add(logits, leaves[self.out_b])?;
        let loss = g.cross_entropy(logits, expected, Some(PAD_ID))?;
        Ok((logits, loss))
    }

    /// Teacher-forced loss and logits as plain values.
    pub fn teacher_forced(
        &self,
        emb: &[f64],
        targets: &[u32],
    ) -> ModelResult<(Vec<Vec<f64>>, f64)> {
        let mut g = Graph::new();
        let leaves = self.params.bind(&mut g, false)?;
        let emb_node = g.constant(&Tensor::vector(emb))?;
        let (logits, loss) = self.teacher_forced_on(&mut g, &leaves, emb_node, targets)?;
        let v = self.vocab.len();
        let rows = g
            .value(logits)
            .data()
            .chunks(v)
            .map(|c| c.to_vec())
            .collect();
        Ok((rows, g.value(loss).item()))
    }

    /// One free-running step: next-token log-probabilities and new state.
    fn step_values(&self, stepper: &mut Stepper, token: u32, state: &[f64]) -> (Vec<f64>, Vec<f64>) {
        stepper.step(self, token, state)
    }
}

/// Free-running decode scratch. Steps run on raw parameter slices through
/// the same matmul/activation primitives as the graph path, so the two
/// stay bit-identical; the graph would recopy every parameter per step.
struct Stepper {
    cond: Vec<f64>,
}

impl Stepper {
    fn new(dec: &EmbeddingConditionedDecoder, emb: &[f64]) -> ModelResult<Self> {
        if emb.len() != dec.d {
            return Err(ModelError::FrameDimMismatch {
                got: emb.len(),
                expected: dec.d,
            });
        }
        let mut cond = vec![0.0; dec.h];
        matmul_into(emb, dec.params.value(dec.cond_w).data(), 1, dec.d, dec.h, &mut cond);
        for (c, b) in cond.iter_mut().zip(dec.params.value(dec.cond_b).data()) {
            *c += b;
        }
        Ok(Self { cond })
    }

    fn step(
        &mut self,
        dec: &EmbeddingConditionedDecoder,
        token: u32,
        state: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let h = dec.h;
        let v = dec.vocab.len();
        let embed = dec.params.value(dec.embed).data();
        let e = &embed[token as usize * h..(token as usize + 1) * h];

        let mut x = Vec::with_capacity(2 * h);
        x.extend_from_slice(e);
        x.extend_from_slice(&self.cond);
        let mut xg = vec![0.0; 3 * h];
        matmul_into(&x, dec.params.value(dec.gru_wx).data(), 1, 2 * h, 3 * h, &mut xg);
        for (g, b) in xg.iter_mut().zip(dec.params.value(dec.gru_b).data()) {
            *g += b;
        }
        let mut hg = vec![0.0; 3 * h];
        matmul_into(state, dec.params.value(dec.gru_uh).data(), 1, h, 3 * h, &mut hg);

        let mut new_state = vec![0.0; h];
        for i in 0..h {
            let z = sigmoid(xg[i] + hg[i]);
            let r = sigmoid(xg[h + i] + hg[h + i]);
            let c = (xg[2 * h + i] + r * hg[2 * h + i]).tanh();
            new_state[i] = (-z + 1.0) * state[i] + z * c;
        }

        let mut out_in = Vec::with_capacity(2 * h);
        out_in.extend_from_slice(&new_state);
        out_in.extend_from_slice(&self.cond);
        let mut logits = vec![0.0; v];
        matmul_into(&out_in, dec.params.value(dec.out_w).data(), 1, 2 * h, v, &mut logits);
        for (l, b) in logits.iter_mut().zip(dec.params.value(dec.out_b).data()) {
            *l += b;
        }
        let mut lp = vec![0.0; v];
        log_softmax_row(&logits, &mut lp);
        (lp, new_state)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Log-probability of each emission in order, conditioning on the
/// embedding and feeding emissions back autoregressively from BOS. This is
/// the scoring rule shared by greedy and beam decoding; enumeration
/// oracles use it to score candidate sequences exhaustively.
pub fn emission_logprobs(
    dec: &EmbeddingConditionedDecoder,
    emb: &[f64],
    emissions: &[u32],
) -> ModelResult<Vec<f64>> {
    let mut stepper = Stepper::new(dec, emb)?;
    let mut state = vec![0.0; dec.h];
    let mut prev = BOS_ID;
    let mut out = Vec::with_capacity(emissions.len());
    for e in emissions {
        let (lp, new_state) = stepper.step(dec, prev, &state);
        out.push(lp[*e as usize]);
        state = new_state;
        prev = *e;
    }
    Ok(out)
}

/// Greedy decode result. `reached_eos == false` flags truncation at
/// `max_len`, which is a normal outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<u32>,
    pub reached_eos: bool,
}

/// Argmax decoding; ties resolve to the lowest token id, so the output is a
/// pure function of (embedding, parameters, max_len).
pub fn decode_greedy(
    dec: &EmbeddingConditionedDecoder,
    emb: &[f64],
    max_len: usize,
) -> ModelResult<DecodeOutput> {
    assert!(max_len >= 1, "max_len must be >= 1");
    let mut stepper = Stepper::new(dec, emb)?;
    let mut state = vec![0.0; dec.h];
    let mut token = BOS_ID;
    let mut tokens = Vec::new();
    let mut reached_eos = false;
    for _ in 0..max_len {
        let (lp, new_state) = dec.step_values(&mut stepper, token, &state);
        state = new_state;
        token = argmax(&lp) as u32;
        if token == EOS_ID {
            reached_eos = true;
            break;
        }
        if token != PAD_ID && token != BOS_ID {
            tokens.push(token);
        }
    }
    Ok(DecodeOutput { tokens, reached_eos })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    pub tokens: Vec<u32>,
    /// Length-normalized log-probability (EOS step included when present).
    pub score: f64,
    pub reached_eos: bool,
}

struct Hyp {
    tokens: Vec<u32>,
    state: Vec<f64>,
    logprob: f64,
    last: u32,
}

/// Beam search with length-normalized final scores. Prefixes are ranked by
/// total log-probability while expanding; finished hypotheses compete by
/// logprob / steps. `beam == 1` reproduces [`decode_greedy`] exactly.
pub fn decode_beam(
    dec: &EmbeddingConditionedDecoder,
    emb: &[f64],
    beam: usize,
    max_len: usize,
) -> ModelResult<BeamOutput> {
    assert!(beam >= 1, "beam must be >= 1");
    assert!(max_len >= 1, "max_len must be >= 1");
    let mut stepper = Stepper::new(dec, emb)?;
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        state: vec![0.0; dec.h],
        logprob: 0.0,
        last: BOS_ID,
    }];
    let mut finished: Vec<BeamOutput> = Vec::new();
    for step in 0..max_len {
        let mut candidates: Vec<(usize, u32, f64, Vec<f64>)> = Vec::new();
        for (hi, hyp) in live.iter().enumerate() {
            let (lp, new_state) = dec.step_values(&mut stepper, hyp.last, &hyp.state);
            for (tok, tok_lp) in lp.iter().enumerate() {
                candidates.push((hi, tok as u32, hyp.logprob + tok_lp, new_state.clone()));
            }
        }
        // Rank by total logprob; ties take the lower token id so beam=1
        // matches greedy's argmax exactly.
        candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.1.cmp(&b.1)));
        candidates.truncate(beam);
        let mut next = Vec::with_capacity(beam);
        for (hi, tok, lp, state) in candidates {
            if tok == EOS_ID {
                finished.push(BeamOutput {
                    tokens: live[hi].tokens.clone(),
                    score: lp / (step + 1) as f64,
                    reached_eos: true,
                });
            } else {
                let mut tokens = live[hi].tokens.clone();
                if tok != PAD_ID && tok != BOS_ID {
                    tokens.push(tok);
                }
                next.push(Hyp {
                    tokens,
                    state,
                    logprob: lp,
                    last: tok,
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    for hyp in live {
        finished.push(BeamOutput {
            tokens: hyp.tokens,
            score: hyp.logprob / max_len as f64,
            reached_eos: false,
        });
    }
    finished.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.tokens.len().cmp(&b.tokens.len()))
            .then(a.tokens.cmp(&b.tokens))
    });
    Ok(finished.into_iter().next().expect("beam always yields"))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}
