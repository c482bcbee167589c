use std::collections::BTreeMap;

use super::*;
use crate::corpus::{base_vocabulary, gen_base_corpus, Grammar};
use crate::models::{
    EmbeddingConditionedDecoder, FrameEncoder, Pooling, SequenceEncoder, Vocabulary,
};
use crate::space::NoiseSpec;
use crate::tensor::{grad_check, AdamConfig, Tensor};

fn tiny_corpus(n: usize, seed: u64) -> Vec<Vec<String>> {
    gen_base_corpus(seed, n, &Grammar::default())
        .into_iter()
        .map(|mut s| {
            s.truncate(8);
            s
        })
        .collect()
}

fn tiny_vocab() -> Vocabulary {
    base_vocabulary(&Grammar::default())
}

fn tiny_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        epochs,
        batch_size: 8,
        optimizer: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        patience: 5,
        validate_every: 1,
    }
}

fn teacher_and_corpus() -> (SequenceEncoder, Vec<Vec<String>>, Vec<Vec<String>>) {
    let vocab = tiny_vocab();
    let teacher = SequenceEncoder::new("teacher", vocab, 16, 12, Pooling::Max, 500);
    let train = tiny_corpus(48, 1);
    let valid = tiny_corpus(16, 2);
    (teacher, train, valid)
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let enc = SequenceEncoder::new("enc", tiny_vocab(), 8, 6, Pooling::Max, 9);
    let mut meta = CheckpointMeta {
        format: String::new(),
        id: "enc".into(),
        kind: ModuleKind::TextEncoder,
        language: Some("L0".into()),
        modality: Modality::Text,
        d: 6,
        h: 8,
        f: None,
        pooling: Some(Pooling::Max),
        vocab_tokens: enc.vocab.content_tokens().map(String::from).collect(),
        vocab_hash: enc.vocab.hash(),
        seed: 9,
        config_hash: "c0ffee".into(),
        corpus_hash: "beef".into(),
        provenance: ProvenanceMeta::default(),
        metrics: BTreeMap::from([("val_loss".to_string(), 0.125)]),
        arrays: Vec::new(),
        payload_sha256: String::new(),
    };
    let p1 = dir.path().join("a.ckpt");
    save_checkpoint(&p1, &mut meta, &enc.params).unwrap();

    let (loaded_meta, arrays) = load_checkpoint(&p1).unwrap();
    assert_eq!(loaded_meta, meta);

    // save(load(x)) must be byte-identical.
    let mut enc2 = SequenceEncoder::new("enc", tiny_vocab(), 8, 6, Pooling::Max, 1234);
    apply_arrays(&mut enc2.params, &loaded_meta, &arrays).unwrap();
    let p2 = dir.path().join("b.ckpt");
    let mut meta2 = loaded_meta.clone();
    save_checkpoint(&p2, &mut meta2, &enc2.params).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn tampered_checkpoint_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let enc = SequenceEncoder::new("enc", tiny_vocab(), 8, 6, Pooling::Max, 9);
    let mut meta = minimal_meta(&enc);
    let path = dir.path().join("t.ckpt");
    save_checkpoint(&path, &mut meta, &enc.params).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    assert!(matches!(
        parse_checkpoint(&bytes),
        Err(TrainError::VerifyFailed)
    ));
}

fn minimal_meta(enc: &SequenceEncoder) -> CheckpointMeta {
    CheckpointMeta {
        format: String::new(),
        id: enc.id.clone(),
        kind: ModuleKind::TextEncoder,
        language: None,
        modality: Modality::Text,
        d: enc.d,
        h: enc.h,
        f: None,
        pooling: Some(enc.pooling),
        vocab_tokens: enc.vocab.content_tokens().map(String::from).collect(),
        vocab_hash: enc.vocab.hash(),
        seed: 0,
        config_hash: String::new(),
        corpus_hash: String::new(),
        provenance: ProvenanceMeta::default(),
        metrics: BTreeMap::new(),
        arrays: Vec::new(),
        payload_sha256: String::new(),
    }
}

#[test]
fn frozen_guard_catches_any_byte_drift() {
    let mut enc = SequenceEncoder::new("enc", tiny_vocab(), 8, 6, Pooling::Max, 9);
    let guard = FrozenGuard::new("enc", &enc.params);
    guard.verify(&enc.params).unwrap();
    let before = enc.params.value(0).data()[0];
    enc.params.value_mut(0).data_mut()[0] = before + 1e-12;
    assert!(matches!(
        guard.verify(&enc.params),
        Err(TrainError::FrozenModuleChanged { .. })
    ));
}

#[test]
fn decoder_training_improves_and_freezes_teacher() {
    let (teacher, train, valid) = teacher_and_corpus();
    let before = teacher.params.fingerprint();
    let mut dec = EmbeddingConditionedDecoder::new("dec", tiny_vocab(), 16, 12, 7);
    let outcome = train_decoder(
        DecoderObjective::Ae,
        &teacher,
        None,
        &AlignedText::tgt_only(train),
        &AlignedText::tgt_only(valid),
        &mut dec,
        &tiny_cfg(6, 3),
    )
    .unwrap();
    assert!(outcome.best_val_loss < outcome.initial_val_loss);
    assert_eq!(teacher.params.fingerprint(), before);
}

/// α = 0 noise must reproduce the plain AE loss trace exactly.
#[test]
fn ae_noise_alpha_zero_is_trace_equivalent_to_ae() {
    let (teacher, train, valid) = teacher_and_corpus();
    let cfg = tiny_cfg(3, 11);
    let mut dec_a = EmbeddingConditionedDecoder::new("dec", tiny_vocab(), 16, 12, 7);
    let a = train_decoder(
        DecoderObjective::Ae,
        &teacher,
        None,
        &AlignedText::tgt_only(train.clone()),
        &AlignedText::tgt_only(valid.clone()),
        &mut dec_a,
        &cfg,
    )
    .unwrap();
    let mut dec_b = EmbeddingConditionedDecoder::new("dec", tiny_vocab(), 16, 12, 7);
    let b = train_decoder(
        DecoderObjective::AeNoise {
            noise: NoiseSpec::new(0.0, 99),
            prob: 1.0,
        },
        &teacher,
        None,
        &AlignedText::tgt_only(train),
        &AlignedText::tgt_only(valid),
        &mut dec_b,
        &cfg,
    )
    .unwrap();
    let losses = |o: &TrainOutcome| -> Vec<f64> { o.curve.iter().map(|r| r.loss).collect() };
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(dec_a.params.fingerprint(), dec_b.params.fingerprint());
}

#[test]
fn bitext_objective_requires_encoder_and_interleaves() {
    let (teacher, train, valid) = teacher_and_corpus();
    let mut dec = EmbeddingConditionedDecoder::new("dec", tiny_vocab(), 16, 12, 7);
    let err = train_decoder(
        DecoderObjective::AeBitext {
            source_lang: "L1".into(),
            mix: 0.5,
        },
        &teacher,
        None,
        &AlignedText {
            src: train.clone(),
            tgt: train.clone(),
        },
        &AlignedText {
            src: valid.clone(),
            tgt: valid.clone(),
        },
        &mut dec,
        &tiny_cfg(2, 3),
    );
    assert!(matches!(err, Err(TrainError::MissingBitextEncoder)));

    let student = SequenceEncoder::new("enc-L1", tiny_vocab(), 16, 12, Pooling::Max, 41);
    let outcome = train_decoder(
        DecoderObjective::AeBitext {
            source_lang: "L1".into(),
            mix: 0.5,
        },
        &teacher,
        Some(&student),
        &AlignedText {
            src: train.clone(),
            tgt: train,
        },
        &AlignedText {
            src: valid.clone(),
            tgt: valid,
        },
        &mut dec,
        &tiny_cfg(2, 3),
    )
    .unwrap();
    // mix 0.5 alternates starting with bitext on even batches.
    assert!(outcome.batch_tags.len() >= 4);
    assert_eq!(outcome.batch_tags[0], "bitext");
    assert_eq!(outcome.batch_tags[1], "raw");
    let bitext = outcome.batch_tags.iter().filter(|t| *t == "bitext").count();
    let raw = outcome.batch_tags.len() - bitext;
    assert!((bitext as i64 - raw as i64).abs() <= 1);
}

/// Self-distillation (student language == pivot) drives validation MSE
/// close to zero: near-identity is learnable.
#[test]
fn self_distillation_reaches_small_mse() {
    let (teacher, train, valid) = teacher_and_corpus();
    let mut student = SequenceEncoder::new("student", tiny_vocab(), 16, 12, Pooling::Max, 19);
    let outcome = train_student(
        &teacher,
        &AlignedText {
            src: train.clone(),
            tgt: train,
        },
        &AlignedText {
            src: valid.clone(),
            tgt: valid,
        },
        DistillLoss::Mse,
        &mut student,
        &tiny_cfg(40, 5),
    )
    .unwrap();
    assert!(
        outcome.best_val_loss < 1e-3,
        "val mse {}",
        outcome.best_val_loss
    );
}

#[test]
fn cosine_distillation_shares_the_interface() {
    let (teacher, train, valid) = teacher_and_corpus();
    let mut student = SequenceEncoder::new("student", tiny_vocab(), 16, 12, Pooling::Max, 19);
    let outcome = train_student(
        &teacher,
        &AlignedText {
            src: train.clone(),
            tgt: train,
        },
        &AlignedText {
            src: valid.clone(),
            tgt: valid,
        },
        DistillLoss::Cosine,
        &mut student,
        &tiny_cfg(10, 5),
    )
    .unwrap();
    assert!(outcome.best_val_loss < outcome.initial_val_loss);
}

#[test]
fn ce_finetune_rejects_non_mse_init_and_freezes_decoder() {
    let (teacher, train, valid) = teacher_and_corpus();
    let mut dec = EmbeddingConditionedDecoder::new("dec", tiny_vocab(), 16, 12, 7);
    train_decoder(
        DecoderObjective::Ae,
        &teacher,
        None,
        &AlignedText::tgt_only(train.clone()),
        &AlignedText::tgt_only(valid.clone()),
        &mut dec,
        &tiny_cfg(4, 3),
    )
    .unwrap();

    let mut student = SequenceEncoder::new("student", tiny_vocab(), 16, 12, Pooling::Max, 19);
    assert!(matches!(
        ce_finetune_student(
            "random",
            &dec,
            &AlignedText {
                src: train.clone(),
                tgt: train.clone(),
            },
            &AlignedText {
                src: valid.clone(),
                tgt: valid.clone(),
            },
            &mut student,
            &tiny_cfg(2, 3),
        ),
        Err(TrainError::BadInit { .. })
    ));

    let dec_before = dec.params.fingerprint();
    let outcome = ce_finetune_student(
        "distill_mse",
        &dec,
        &AlignedText {
            src: train.clone(),
            tgt: train,
        },
        &AlignedText {
            src: valid.clone(),
            tgt: valid,
        },
        &mut student,
        &tiny_cfg(3, 3),
    )
    .unwrap();
    assert_eq!(dec.params.fingerprint(), dec_before);
    // Early stopping keeps the best checkpoint, so the kept validation CE
    // never exceeds the initial one.
    assert!(outcome.best_val_loss <= outcome.initial_val_loss);
}

/// Frozen-decoder CE fine-tune path: student-parameter gradients against
/// central finite differences on a tiny config.
#[test]
fn ce_finetune_gradients_match_fd() {
    let vocab = Vocabulary::new((0..6).map(|i| format!("w{i}"))).unwrap();
    let student = SequenceEncoder::new("s", vocab.clone(), 4, 3, Pooling::Max, 3);
    let dec = EmbeddingConditionedDecoder::new("d", vocab, 4, 3, 5);
    let ids = [4u32, 6, 5];
    let targets = [1u32, 4, 6, 5, 2]; // BOS .. EOS
    let tensors: Vec<Tensor> = (0..student.params.len())
        .map(|s| student.params.value(s).clone())
        .collect();
    let err = grad_check(
        |g, leaves| {
            let dec_leaves = dec.params.bind(g, false)?;
            let (_, emb) = student.encode_on(g, leaves, &ids).map_err(unwrap_tensor)?;
            let (_, loss) = dec
                .teacher_forced_on(g, &dec_leaves, emb, &targets)
                .map_err(unwrap_tensor)?;
            Ok(loss)
        },
        &tensors,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

fn unwrap_tensor(e: crate::models::ModelError) -> crate::tensor::TensorError {
    match e {
        crate::models::ModelError::Tensor(t) => t,
        other => panic!("unexpected: {other}"),
    }
}

fn speech_data(n: usize, seed: u64) -> SpeechData {
    let sentences = tiny_corpus(n, seed);
    let vocab = tiny_vocab();
    let synth = crate::corpus::FrameSynthesizer::new("L0", vocab, 6, 77);
    SpeechData {
        frames: sentences
            .iter()
            .enumerate()
            .map(|(i, s)| synth.synth_frames(s, seed.wrapping_add(i as u64)).unwrap())
            .collect(),
        transcripts: sentences.clone(),
        translations: sentences,
    }
}

#[test]
fn speech_student_modes_enforce_prerequisites_and_alternate() {
    let (teacher, _, _) = teacher_and_corpus();
    let train = speech_data(32, 21);
    let valid = speech_data(8, 22);
    let mut fe = FrameEncoder::new("fe", 6, 16, 12, 9);
    assert!(matches!(
        train_speech_student(
            TeacherMode::Transcription,
            None,
            Some(&teacher),
            &train,
            &valid,
            &mut fe,
            &tiny_cfg(2, 3)
        ),
        Err(TrainError::MissingPrerequisite { .. })
    ));
    assert!(matches!(
        train_speech_student(
            TeacherMode::Translation,
            Some(&teacher),
            None,
            &train,
            &valid,
            &mut fe,
            &tiny_cfg(2, 3)
        ),
        Err(TrainError::MissingPrerequisite { .. })
    ));

    let teacher_before = teacher.params.fingerprint();
    let outcome = train_speech_student(
        TeacherMode::Both,
        Some(&teacher),
        Some(&teacher),
        &train,
        &valid,
        &mut fe,
        &tiny_cfg(4, 3),
    )
    .unwrap();
    assert_eq!(teacher.params.fingerprint(), teacher_before);
    let transcription = outcome
        .batch_tags
        .iter()
        .filter(|t| *t == "transcription")
        .count();
    let total = outcome.batch_tags.len();
    let share = transcription as f64 / total as f64;
    assert!((share - 0.5).abs() <= 0.02, "share {share}");
}

#[test]
fn unit_decoder_rejects_unnormalized_targets_and_trains_on_raw_frames() {
    let train = speech_data(24, 31);
    let valid = speech_data(8, 32);
    let fe = FrameEncoder::new("fe", 6, 16, 12, 9);
    let mut dec = EmbeddingConditionedDecoder::for_units("ud", 8, 16, 12, 2);

    let bad = UnitData {
        frames: train.frames.clone(),
        transcripts: train.transcripts.clone(),
        units: vec![vec![1, 1, 2]; train.frames.len()],
    };
    let good_units = |n: usize, seed: u64| -> Vec<Vec<u32>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(2..6);
                let mut units = Vec::with_capacity(len);
                let mut last = u32::MAX;
                for _ in 0..len {
                    let mut u = rng.gen_range(0..8u32);
                    if u == last {
                        u = (u + 1) % 8;
                    }
                    units.push(u);
                    last = u;
                }
                units
            })
            .collect()
    };
    let good_train = UnitData {
        frames: train.frames.clone(),
        transcripts: train.transcripts.clone(),
        units: good_units(train.frames.len(), 5),
    };
    let good_valid = UnitData {
        frames: valid.frames.clone(),
        transcripts: valid.transcripts.clone(),
        units: good_units(valid.frames.len(), 6),
    };

    assert!(matches!(
        train_unit_decoder(
            UnitSource::RawFrames(&fe),
            &bad,
            &good_valid,
            &mut dec,
            &tiny_cfg(2, 3)
        ),
        Err(TrainError::UnnormalizedTargets { .. })
    ));

    let fe_before = fe.params.fingerprint();
    train_unit_decoder(
        UnitSource::RawFrames(&fe),
        &good_train,
        &good_valid,
        &mut dec,
        &tiny_cfg(2, 3),
    )
    .unwrap();
    assert_eq!(fe.params.fingerprint(), fe_before);
}

#[test]
fn pretraining_reduces_autoencode_loss() {
    let vocab = tiny_vocab();
    let mut enc = SequenceEncoder::new("teacher", vocab.clone(), 16, 12, Pooling::Max, 1);
    let mut dec = EmbeddingConditionedDecoder::new("dec-orig", vocab, 16, 12, 2);
    let train = tiny_corpus(48, 41);
    let valid = tiny_corpus(16, 42);
    let outcome = pretrain_teacher(&train, &valid, &mut enc, &mut dec, &tiny_cfg(6, 3)).unwrap();
    assert!(outcome.best_val_loss < outcome.initial_val_loss);
}

#[test]
fn training_is_reproducible_given_config_seed() {
    let (teacher, train, valid) = teacher_and_corpus();
    let run = || {
        let mut dec = EmbeddingConditionedDecoder::new("dec", tiny_vocab(), 16, 12, 7);
        train_decoder(
            DecoderObjective::Ae,
            &teacher,
            None,
            &AlignedText::tgt_only(train.clone()),
            &AlignedText::tgt_only(valid.clone()),
            &mut dec,
            &tiny_cfg(3, 13),
        )
        .unwrap();
        dec.params.fingerprint()
    };
    assert_eq!(run(), run());
}

#[test]
fn curve_csv_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves/run.csv");
    let rows = vec![
        CurveRow {
            step: 0,
            split: "valid".into(),
            loss: 4.2,
            metric: 0.1,
        },
        CurveRow {
            step: 1,
            split: "train".into(),
            loss: 3.1,
            metric: 0.0,
        },
    ];
    write_curve_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("step,split,loss,metric\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn interleave_fractions_match_mix() {
    for mix in [0.25, 0.5, 0.75, 1.0] {
        let hits = (0..1000).filter(|b| interleave_primary(*b, mix)).count();
        assert!(
            (hits as f64 / 1000.0 - mix).abs() <= 0.01,
            "mix {mix} got {hits}"
        );
    }
    assert!(interleave_primary(0, 0.5));
    assert!(!interleave_primary(1, 0.5));
}
