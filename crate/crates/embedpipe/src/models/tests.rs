use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::tensor::{grad_check, Graph, Tensor};

fn toy_vocab(n: usize) -> Vocabulary {
    Vocabulary::new((0..n).map(|i| format!("w{i}"))).unwrap()
}

fn toy_encoder(pooling: Pooling) -> SequenceEncoder {
    SequenceEncoder::new("enc-test", toy_vocab(12), 8, 6, pooling, 42)
}

fn toy_decoder(seed: u64) -> EmbeddingConditionedDecoder {
    EmbeddingConditionedDecoder::new("dec-test", toy_vocab(12), 8, 6, seed)
}

fn random_emb(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

#[test]
fn param_counts_match_architecture_arithmetic() {
    let enc = toy_encoder(Pooling::Max);
    assert_eq!(
        enc.params.total_values(),
        SequenceEncoder::expected_param_values(enc.vocab.len(), 8, 6)
    );
    let fe = FrameEncoder::new("fe-test", 5, 8, 6, 1);
    assert_eq!(
        fe.params.total_values(),
        FrameEncoder::expected_param_values(5, 8, 6)
    );
    let dec = toy_decoder(1);
    assert_eq!(
        dec.params.total_values(),
        EmbeddingConditionedDecoder::expected_param_values(dec.vocab.len(), 8, 6)
    );
}

#[test]
fn encode_length_one_embedding_equals_single_state() {
    let enc = toy_encoder(Pooling::Max);
    let (states, emb) = enc.encode(&[5]).unwrap();
    assert_eq!(states.len(), 1);
    assert_eq!(states[0], emb.values);
}

#[test]
fn encode_output_dimension_and_finiteness() {
    let enc = toy_encoder(Pooling::Max);
    let (_, emb) = enc.encode(&[4, 5, 6, 7]).unwrap();
    assert_eq!(emb.dim(), 6);
    assert!(emb.values.iter().all(|v| v.is_finite()));
    assert_eq!(emb.provenance.encoder_id, "enc-test");
}

#[test]
fn max_pool_bound_holds_under_permutation() {
    let enc = toy_encoder(Pooling::Max);
    for tokens in [vec![4, 5, 6, 7, 8], vec![8, 7, 6, 5, 4]] {
        let (states, emb) = enc.encode(&tokens).unwrap();
        for i in 0..emb.dim() {
            let brute = states
                .iter()
                .map(|s| s[i])
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(emb.values[i], brute, "dim {i}");
        }
    }
}

#[test]
fn bos_pooling_takes_first_state_and_is_order_sensitive() {
    let enc = toy_encoder(Pooling::Bos);
    let (states, emb) = enc.encode(&[4, 5, 6]).unwrap();
    assert_eq!(states[0], emb.values);
    let (_, permuted) = enc.encode(&[6, 5, 4]).unwrap();
    assert_ne!(emb.values, permuted.values);
}

#[test]
fn encode_rejects_empty_and_out_of_range() {
    let enc = toy_encoder(Pooling::Max);
    assert!(matches!(enc.encode(&[]), Err(ModelError::EmptySequence)));
    assert!(matches!(
        enc.encode(&[99]),
        Err(ModelError::TokenOutOfRange { .. })
    ));
}

#[test]
fn frame_encoder_shape_contract_and_length_sensitivity() {
    let fe = FrameEncoder::new("fe-test", 4, 8, 6, 3);
    let frame = vec![0.5, -0.25, 1.0, 0.0];
    let single = fe.encode(&[frame.clone()]).unwrap();
    assert_eq!(single.dim(), 6);

    // No length normalization is promised: duplicating every frame is
    // allowed to (and here does) change the embedding.
    let seq = vec![frame.clone(), vec![1.0, 2.0, -1.0, 0.5]];
    let doubled: Vec<Vec<f64>> = seq.iter().flat_map(|f| [f.clone(), f.clone()]).collect();
    let a = fe.encode(&seq).unwrap();
    let b = fe.encode(&doubled).unwrap();
    assert_ne!(a.values, b.values);

    assert!(matches!(
        fe.encode(&[vec![1.0, 2.0]]),
        Err(ModelError::FrameDimMismatch { .. })
    ));
}

#[test]
fn frame_encoder_prefix_ignores_trailing_padding() {
    let fe = FrameEncoder::new("fe-test", 4, 8, 6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frames: Vec<Vec<f64>> = (0..5).map(|_| random_emb(&mut rng, 4)).collect();
    let mut padded = frames.clone();
    padded.push(vec![0.0; 4]);
    padded.push(vec![0.0; 4]);
    let plain = fe.encode(&frames).unwrap();
    let masked = fe.encode_prefix(&padded, 5).unwrap();
    assert_eq!(plain.values, masked.values);
}

#[test]
fn teacher_forced_degenerate_bias_gives_zero_loss() {
    let mut dec = toy_decoder(7);
    // Push the EOS logit far up via the output bias: the decoder then puts
    // probability ~1 on the target at every step of [BOS, EOS].
    let slot = dec
        .params
        .iter_named()
        .position(|(n, _)| n == "out.b")
        .unwrap();
    dec.params.value_mut(slot).data_mut()[EOS_ID as usize] = 60.0;
    let (_, loss) = dec.teacher_forced(&[0.0; 6], &[BOS_ID, EOS_ID]).unwrap();
    assert!(loss < 1e-15, "loss {loss}");
}

#[test]
fn teacher_forced_uniform_decoder_loss_is_ln_v() {
    let mut dec = toy_decoder(7);
    for slot in 0..dec.params.len() {
        for v in dec.params.value_mut(slot).data_mut() {
            *v = 0.0;
        }
    }
    let targets = [BOS_ID, 4, 5, 6, EOS_ID];
    let (_, loss) = dec.teacher_forced(&[0.0; 6], &targets).unwrap();
    let ln_v = (dec.vocab.len() as f64).ln();
    assert!((loss - ln_v).abs() < 1e-12, "loss {loss} vs ln V {ln_v}");
}

#[test]
fn teacher_forced_requires_bos_eos() {
    let dec = toy_decoder(7);
    let e = [0.0; 6];
    assert!(matches!(
        dec.teacher_forced(&e, &[4, 5, EOS_ID]),
        Err(ModelError::MissingBosEos)
    ));
    assert!(matches!(
        dec.teacher_forced(&e, &[BOS_ID, 4, 5]),
        Err(ModelError::MissingBosEos)
    ));
    assert!(dec.teacher_forced(&e, &[BOS_ID, 4, EOS_ID, PAD_ID]).is_ok());
}

#[test]
fn teacher_forced_loss_gradient_wrt_embedding_matches_fd() {
    let dec = toy_decoder(11);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let emb = Tensor::vector(&random_emb(&mut rng, 6));
    let targets = [BOS_ID, 4, 7, 5, EOS_ID];
    let err = grad_check(
        |g, leaves| {
            let dec_leaves = dec.params.bind(g, false)?;
            let (_, loss) = dec
                .teacher_forced_on(g, &dec_leaves, leaves[0], &targets)
                .map_err(|e| match e {
                    ModelError::Tensor(t) => t,
                    other => panic!("unexpected: {other}"),
                })?;
            Ok(loss)
        },
        &[emb],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

/// Full decoder CE path: every decoder parameter against central FD.
#[test]
fn teacher_forced_all_params_match_fd() {
    let dec = EmbeddingConditionedDecoder::new("dec-tiny", toy_vocab(5), 4, 3, 13);
    let emb = vec![0.3, -0.4, 0.9];
    let targets = [BOS_ID, 4, 6, 5, 7, EOS_ID];
    let tensors: Vec<Tensor> = (0..dec.params.len())
        .map(|s| dec.params.value(s).clone())
        .collect();
    let err = grad_check(
        |g, leaves| {
            let emb_node = g.constant(&Tensor::vector(&emb))?;
            let dec_view = &dec;
            let (_, loss) = dec_view
                .teacher_forced_on(g, leaves, emb_node, &targets)
                .map_err(|e| match e {
                    ModelError::Tensor(t) => t,
                    other => panic!("unexpected: {other}"),
                })?;
            Ok(loss)
        },
        &tensors,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn greedy_on_eos_biased_decoder_is_empty() {
    let mut dec = toy_decoder(9);
    let slot = dec
        .params
        .iter_named()
        .position(|(n, _)| n == "out.b")
        .unwrap();
    dec.params.value_mut(slot).data_mut()[EOS_ID as usize] = 60.0;
    let out = decode_greedy(&dec, &[0.1; 6], 10).unwrap();
    assert!(out.tokens.is_empty());
    assert!(out.reached_eos);
}

#[test]
fn greedy_is_deterministic() {
    let dec = toy_decoder(10);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let emb = random_emb(&mut rng, 6);
    let a = decode_greedy(&dec, &emb, 8).unwrap();
    let b = decode_greedy(&dec, &emb, 8).unwrap();
    assert_eq!(a, b);
}

/// The decoder sees only the embedding: per-step encoder states can be
/// replaced with garbage without changing any decoder output.
#[test]
fn bottleneck_decoder_ignores_encoder_states() {
    let enc = toy_encoder(Pooling::Max);
    let dec = toy_decoder(15);
    let (states, emb) = enc.encode(&[4, 8, 6]).unwrap();
    let garbage: Vec<Vec<f64>> = states.iter().map(|s| vec![1e9; s.len()]).collect();
    drop(garbage); // nothing to pass: the decode APIs accept only the embedding
    let a = decode_greedy(&dec, &emb.values, 6).unwrap();
    let b = decode_greedy(&dec, &emb.values, 6).unwrap();
    assert_eq!(a, b);
}

/// Free-running steps must agree bitwise with the graph-built
/// teacher-forced logits on the same prefix.
#[test]
fn stepper_matches_graph_logits_bitwise() {
    let dec = toy_decoder(21);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let emb = random_emb(&mut rng, 6);
    let targets = [BOS_ID, 4, 9, 5, EOS_ID];
    let (rows, _) = dec.teacher_forced(&emb, &targets).unwrap();
    let lps = emission_logprobs(&dec, &emb, &targets[1..]).unwrap();
    for (t, row) in rows.iter().enumerate() {
        let mut expect = vec![0.0; row.len()];
        crate::tensor::log_softmax_row(row, &mut expect);
        assert_eq!(
            expect[targets[t + 1] as usize], lps[t],
            "step {t} diverged"
        );
    }
}

#[test]
fn beam_one_equals_greedy_on_random_embeddings() {
    let dec = toy_decoder(33);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let emb = random_emb(&mut rng, 6);
        let g = decode_greedy(&dec, &emb, 6).unwrap();
        let b = decode_beam(&dec, &emb, 1, 6).unwrap();
        assert_eq!(g.tokens, b.tokens);
        assert_eq!(g.reached_eos, b.reached_eos);
    }
}

/// Exhaustive oracle at toy scale: every emission sequence up to max_len
/// is scored; beam-4 must (a) score at least beam-1, and (b) land in the
/// oracle's top 4.
#[test]
fn beam_against_enumeration_oracle() {
    let max_len = 4usize;
    let vocab = toy_vocab(4); // total size 8
    for seed in 0..6u64 {
        let dec = EmbeddingConditionedDecoder::new("dec-enum", vocab.clone(), 6, 4, 100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = random_emb(&mut rng, 4);

        // Enumerate raw emission sequences: EOS-terminated within max_len,
        // plus truncated sequences of exactly max_len non-EOS emissions.
        let non_eos: Vec<u32> = (0..vocab.len() as u32).filter(|t| *t != EOS_ID).collect();
        let mut scored: Vec<(f64, Vec<u32>)> = Vec::new();
        let mut stack: Vec<Vec<u32>> = vec![vec![]];
        while let Some(prefix) = stack.pop() {
            if prefix.len() < max_len {
                // EOS-terminated completion of this prefix.
                let mut emis = prefix.clone();
                emis.push(EOS_ID);
                let lps = emission_logprobs(&dec, &emb, &emis).unwrap();
                let score = lps.iter().sum::<f64>() / emis.len() as f64;
                scored.push((score, emis));
                for t in &non_eos {
                    let mut next = prefix.clone();
                    next.push(*t);
                    stack.push(next);
                }
            } else {
                let lps = emission_logprobs(&dec, &emb, &prefix).unwrap();
                let score = lps.iter().sum::<f64>() / prefix.len() as f64;
                scored.push((score, prefix));
            }
        }
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

        let b1 = decode_beam(&dec, &emb, 1, max_len).unwrap();
        let b4 = decode_beam(&dec, &emb, 4, max_len).unwrap();
        assert!(
            b4.score >= b1.score - 1e-12,
            "seed {seed}: beam4 {} < beam1 {}",
            b4.score,
            b1.score
        );
        let top4: Vec<f64> = scored.iter().take(4).map(|s| s.0).collect();
        assert!(
            top4.iter().any(|s| (s - b4.score).abs() <= 1e-9),
            "seed {seed}: beam4 score {} not among oracle top-4 {:?}",
            b4.score,
            top4
        );
    }
}

#[test]
fn unit_decoder_vocab_layout() {
    let dec = EmbeddingConditionedDecoder::for_units("dec-units", 6, 8, 6, 2);
    assert_eq!(dec.vocab.len(), 6 + UNIT_RESERVED);
    assert_eq!(dec.vocab.id_of("u0"), UNIT_RESERVED as u32);
    assert_eq!(dec.vocab.token(9), "u5");
}

#[test]
fn encoder_forward_is_deterministic() {
    let enc = toy_encoder(Pooling::Max);
    let a = enc.encode(&[4, 5, 6, 7, 8, 9]).unwrap().1;
    let b = enc.encode(&[4, 5, 6, 7, 8, 9]).unwrap().1;
    assert_eq!(a.values, b.values);
}

/// Distillation path: gradient of MSE(student(x), target) w.r.t. every
/// encoder parameter against central FD on a tiny config.
#[test]
fn encoder_mse_distillation_grads_match_fd() {
    let enc = SequenceEncoder::new("enc-tiny", toy_vocab(5), 4, 3, Pooling::Max, 77);
    let tokens = [4u32, 6, 5];
    let target = [0.2, -0.7, 0.4];
    let tensors: Vec<Tensor> = (0..enc.params.len())
        .map(|s| enc.params.value(s).clone())
        .collect();
    let err = grad_check(
        |g, leaves| {
            let (_, emb) = enc
                .encode_on(g, leaves, &tokens)
                .map_err(|e| match e {
                    ModelError::Tensor(t) => t,
                    other => panic!("unexpected: {other}"),
                })?;
            let t = g.constant(&Tensor::vector(&target))?;
            let neg = g.affine(t, -1.0, 0.0)?;
            let diff = g.add(emb, neg)?;
            let sq = g.mul(diff, diff)?;
            g.mean(sq)
        },
        &tensors,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn rebinding_params_reproduces_values() {
    let enc = toy_encoder(Pooling::Max);
    let mut g = Graph::new();
    let leaves = enc.params.bind(&mut g, true).unwrap();
    for (slot, leaf) in leaves.iter().enumerate() {
        assert_eq!(g.value(*leaf).data(), enc.params.value(slot).data());
    }
}

#[test]
fn grad_accumulation_flows_back_to_params() {
    let mut enc = toy_encoder(Pooling::Max);
    let mut g = Graph::new();
    let leaves = enc.params.bind(&mut g, true).unwrap();
    let (_, emb) = enc.encode_on(&mut g, &leaves, &[4, 5]).unwrap();
    let sq = g.mul(emb, emb).unwrap();
    let loss = g.mean(sq).unwrap();
    g.backward(loss).unwrap();
    enc.params.accumulate_grads(&g, &leaves);
    let any_nonzero = (0..enc.params.len())
        .any(|s| enc.params.grad(s).data().iter().any(|v| *v != 0.0));
    assert!(any_nonzero);
    enc.params.zero_grads();
    let all_zero = (0..enc.params.len())
        .all(|s| enc.params.grad(s).data().iter().all(|v| *v == 0.0));
    assert!(all_zero);
}

#[test]
fn random_gen_in_range(){
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v: f64 = rng.gen_range(-1.0..1.0);
    assert!((-1.0..1.0).contains(&v));
}
