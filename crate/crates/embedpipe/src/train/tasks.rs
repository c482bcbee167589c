use serde::{Deserialize, Serialize};

use super::{interleave_primary, run_training, FrozenGuard, Task, TrainConfig, TrainError,
    TrainOutcome, TrainResult};
use crate::corpus::LangId;
use crate::models::{
    EmbeddingConditionedDecoder, FrameEncoder, SequenceEncoder, UnitDecoder, BOS_ID, EOS_ID,
    UNIT_RESERVED,
};
use crate::space::NoiseSpec;
use crate::tensor::{Adam, Graph, NodeId, Tensor};

/// The three decoder training objectives.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum DecoderObjective {
    /// Auto-encode raw pivot text through the frozen encoder.
    Ae,
    /// Auto-encode with multiplicative noise on the sentence embedding.
    /// `prob` is the per-example application probability.
    AeNoise { noise: NoiseSpec, prob: f64 },
    /// Interleave bitext batches (source-language embedding → pivot
    /// target) with raw pivot auto-encoding at `mix` (fraction of bitext
    /// batches, in (0, 1]).
    AeBitext { source_lang: LangId, mix: f64 },
}

impl DecoderObjective {
    pub fn tag(&self) -> &'static str {
        match self {
            DecoderObjective::Ae => "ae",
            DecoderObjective::AeNoise { .. } => "ae_noise",
            DecoderObjective::AeBitext { .. } => "ae_bitext",
        }
    }
}

/// Which text embedding a speech student distills toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMode {
    /// Same-language transcript through the language's text student.
    Transcription,
    /// Pivot-language translation through the pivot teacher.
    Translation,
    /// Alternate both targets per batch, 50/50.
    Both,
}

impl TeacherMode {
    pub fn tag(&self) -> &'static str {
        match self {
            TeacherMode::Transcription => "transcription",
            TeacherMode::Translation => "translation",
            TeacherMode::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillLoss {
    Mse,
    Cosine,
}

/// Aligned sentences for decoder training: `tgt` is the decoded language
/// (always present); `src` carries the bitext source side when the
/// objective needs one.
pub struct AlignedText {
    pub src: Vec<Vec<String>>,
    pub tgt: Vec<Vec<String>>,
}

impl AlignedText {
    pub fn tgt_only(tgt: Vec<Vec<String>>) -> Self {
        Self {
            src: Vec::new(),
            tgt,
        }
    }
}

fn embed_all(enc: &SequenceEncoder, sentences: &[Vec<String>]) -> TrainResult<Vec<Vec<f64>>> {
    sentences
        .iter()
        .map(|s| {
            let ids = enc.vocab.encode(s);
            Ok(enc.embed_sentence(&ids)?.values)
        })
        .collect()
}

fn targets_of(dec: &EmbeddingConditionedDecoder, sentence: &[String]) -> Vec<u32> {
    let mut t = Vec::with_capacity(sentence.len() + 2);
    t.push(BOS_ID);
    t.extend(dec.vocab.encode(sentence));
    t.push(EOS_ID);
    t
}

/// Teacher-forced validation over a cached (embedding, targets) list:
/// mean loss and mean token accuracy (PAD excluded; there is no padding in
/// per-sentence batches).
fn validate_decoder(
    dec: &EmbeddingConditionedDecoder,
    embs: &[Vec<f64>],
    targets: &[Vec<u32>],
) -> TrainResult<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (e, t) in embs.iter().zip(targets) {
        let (logits, loss) = dec.teacher_forced(e, t)?;
        loss_sum += loss;
        for (row, expect) in logits.iter().zip(&t[1..]) {
            let mut best = 0usize;
            for (i, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = i;
                }
            }
            if best as u32 == *expect {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok((loss_sum / embs.len() as f64, correct as f64 / total as f64))
}

struct DecoderTask<'a> {
    dec: &'a mut EmbeddingConditionedDecoder,
    adam: Adam,
    objective: DecoderObjective,
    tgt_emb: Vec<Vec<f64>>,
    src_emb: Vec<Vec<f64>>,
    train_targets: Vec<Vec<u32>>,
    val_tgt_emb: Vec<Vec<f64>>,
    val_src_emb: Vec<Vec<f64>>,
    val_targets: Vec<Vec<u32>>,
}

impl DecoderTask<'_> {
    fn step(&mut self, emb: &[f64], targets: &[u32]) -> TrainResult<f64> {
        let mut g = Graph::new();
        let leaves = self.dec.params.bind(&mut g, true)?;
        let emb_node = g.constant(&Tensor::vector(emb))?;
        let (_, loss) = self.dec.teacher_forced_on(&mut g, &leaves, emb_node, targets)?;
        g.backward(loss)?;
        self.dec.params.accumulate_grads(&g, &leaves);
        Ok(g.value(loss).item())
    }
}

impl Task for DecoderTask<'_> {
    fn train_len(&self) -> usize {
        self.train_targets.len()
    }

    fn example_loss(&mut self, idx: usize, batch_idx: usize, counter: u64) -> TrainResult<f64> {
        match &self.objective {
            DecoderObjective::Ae => {
                let emb = self.tgt_emb[idx].clone();
                let targets = self.train_targets[idx].clone();
                self.step(&emb, &targets)
            }
            DecoderObjective::AeNoise { noise, prob } => {
                let mut emb = self.tgt_emb[idx].clone();
                let mut rng = noise.stream(counter);
                let apply = *prob >= 1.0 || rand::Rng::gen_bool(&mut rng, *prob);
                if apply {
                    crate::space::perturb_values(&mut emb, noise, &mut rng);
                }
                let targets = self.train_targets[idx].clone();
                self.step(&emb, &targets)
            }
            DecoderObjective::AeBitext { mix, .. } => {
                let bitext = interleave_primary(batch_idx, *mix);
                let emb = if bitext {
                    self.src_emb[idx].clone()
                } else {
                    self.tgt_emb[idx].clone()
                };
                let targets = self.train_targets[idx].clone();
                self.step(&emb, &targets)
            }
        }
    }

    fn apply_batch(&mut self, batch_len: usize) -> TrainResult<()> {
        self.dec.params.scale_grads(1.0 / batch_len as f64);
        self.dec.params.adam_step(&mut self.adam)?;
        self.dec.params.zero_grads();
        Ok(())
    }

    fn validate(&mut self) -> TrainResult<(f64, f64)> {
        let (raw_loss, raw_acc) =
            validate_decoder(self.dec, &self.val_tgt_emb, &self.val_targets)?;
        if matches!(self.objective, DecoderObjective::AeBitext { .. }) {
            let (bi_loss, bi_acc) =
                validate_decoder(self.dec, &self.val_src_emb, &self.val_targets)?;
            Ok(((raw_loss + bi_loss) / 2.0, (raw_acc + bi_acc) / 2.0))
        } else {
            Ok((raw_loss, raw_acc))
        }
    }

    fn snapshot(&self) -> Vec<Tensor> {
        self.dec.params.snapshot_values()
    }

    fn restore(&mut self, snap: &[Tensor]) {
        self.dec.params.restore_values(snap);
    }

    fn batch_tag(&self, batch_idx: usize) -> Option<String> {
        match &self.objective {
            DecoderObjective::AeBitext { mix, .. } => Some(
                if interleave_primary(batch_idx, *mix) {
                    "bitext".to_string()
                } else {
                    "raw".to_string()
                },
            ),
            _ => None,
        }
    }
}

/// Train a decoder against frozen encoders under one of the three
/// objectives. `raw_encoder` encodes the decoded (target) language's raw
/// stream — the teacher for pivot decoders, the language's student for
/// non-pivot decoders. Encoder parameters are fingerprinted before and
/// after; any drift is a hard failure.
pub fn train_decoder(
    objective: DecoderObjective,
    raw_encoder: &SequenceEncoder,
    bitext_encoder: Option<&SequenceEncoder>,
    train: &AlignedText,
    valid: &AlignedText,
    decoder: &mut EmbeddingConditionedDecoder,
    cfg: &TrainConfig,
) -> TrainResult<TrainOutcome> {
    let raw_guard = FrozenGuard::new(&raw_encoder.id, &raw_encoder.params);
    let bitext_guard = bitext_encoder.map(|e| FrozenGuard::new(&e.id, &e.params));

    let needs_bitext = matches!(objective, DecoderObjective::AeBitext { .. });
    if needs_bitext && bitext_encoder.is_none() {
        return Err(TrainError::MissingBitextEncoder);
    }
    if let DecoderObjective::AeBitext { mix, .. } = &objective {
        assert!(*mix > 0.0 && *mix <= 1.0, "bitext mix must be in (0, 1]");
    }

    let tgt_emb = embed_all(raw_encoder, &train.tgt)?;
    let val_tgt_emb = embed_all(raw_encoder, &valid.tgt)?;
    let (src_emb, val_src_emb) = if needs_bitext {
        let enc = bitext_encoder.unwrap();
        (embed_all(enc, &train.src)?, embed_all(enc, &valid.src)?)
    } else {
        (Vec::new(), Vec::new())
    };
    let train_targets: Vec<Vec<u32>> =
        train.tgt.iter().map(|s| targets_of(decoder, s)).collect();
    let val_targets: Vec<Vec<u32>> =
        valid.tgt.iter().map(|s| targets_of(decoder, s)).collect();

    let adam = decoder.params.adam(cfg.optimizer);
    let mut task = DecoderTask {
        dec: decoder,
        adam,
        objective,
        tgt_emb,
        src_emb,
        train_targets,
        val_tgt_emb,
        val_src_emb,
        val_targets,
    };
    let outcome = run_training(&mut task, cfg)?;

    raw_guard.verify(&raw_encoder.params)?;
    if let (Some(guard), Some(enc)) = (&bitext_guard, bitext_encoder) {
        guard.verify(&enc.params)?;
    }
    Ok(outcome)
}

enum EmbTarget {
    Values(Vec<Vec<f64>>),
}

struct StudentTask<'a> {
    student: &'a mut SequenceEncoder,
    adam: Adam,
    loss: DistillLoss,
    train_ids: Vec<Vec<u32>>,
    train_targets: EmbTarget,
    val_ids: Vec<Vec<u32>>,
    val_targets: Vec<Vec<f64>>,
}

fn distill_loss_on(
    g: &mut Graph,
    loss: DistillLoss,
    emb: NodeId,
    target: &[f64],
) -> TrainResult<NodeId> {
    let t = g.constant(&Tensor::vector(target))?;
    match loss {
        DistillLoss::Mse => {
            let neg = g.affine(t, -1.0, 0.0)?;
            let diff = g.add(emb, neg)?;
            let sq = g.mul(diff, diff)?;
            Ok(g.mean(sq)?)
        }
        DistillLoss::Cosine => {
            let dot_v = g.mul(emb, t)?;
            let dot = g.sum(dot_v)?;
            let sq = g.mul(emb, emb)?;
            let na = g.sum(sq)?;
            let nb: f64 = target.iter().map(|v| v * v).sum();
            let nb_node = g.constant(&Tensor::scalar(nb))?;
            let prod = g.mul(na, nb_node)?;
            let inv_norm = g.powf(prod, -0.5)?;
            let cos = g.mul(dot, inv_norm)?;
            Ok(g.affine(cos, -1.0, 1.0)?)
        }
    }
}

impl StudentTask<'_> {
    fn step(&mut self, ids: &[u32], target: &[f64]) -> TrainResult<f64> {
        let mut g = Graph::new();
        let leaves = self.student.params.bind(&mut g, true)?;
        let (_, emb) = self.student.encode_on(&mut g, &leaves, ids)?;
        let loss = distill_loss_on(&mut g, self.loss, emb, target)?;
        g.backward(loss)?;
        self.student.params.accumulate_grads(&g, &leaves);
        Ok(g.value(loss).item())
    }

    fn eval_loss(&self, ids: &[u32], target: &[f64]) -> TrainResult<f64> {
        let emb = self.student.embed_sentence(ids)?;
        Ok(match self.loss {
            DistillLoss::Mse => crate::space::mse_loss(&emb.values, target)?,
            DistillLoss::Cosine => crate::space::cosine_loss(&emb.values, target)?,
        })
    }
}

impl Task for StudentTask<'_> {
    fn train_len(&self) -> usize {
        self.train_ids.len()
    }

    fn example_loss(&mut self, idx: usize, _batch_idx: usize, _counter: u64) -> TrainResult<f64> {
        let ids = self.train_ids[idx].clone();
        let EmbTarget::Values(targets) = &self.train_targets;
        let target = targets[idx].clone();
        self.step(&ids, &target)
    }

    fn apply_batch(&mut self, batch_len: usize) -> TrainResult<()> {
        self.student.params.scale_grads(1.0 / batch_len as f64);
        self.student.params.adam_step(&mut self.adam)?;
        self.student.params.zero_grads();
        Ok(())
    }

    fn validate(&mut self) -> TrainResult<(f64, f64)> {
        let mut sum = 0.0;
        for (ids, target) in self.val_ids.iter().zip(&self.val_targets) {
            sum += self.eval_loss(ids, target)?;
        }
        let mean = sum / self.val_ids.len() as f64;
        Ok((mean, mean))
    }

    fn snapshot(&self) -> Vec<Tensor> {
        self.student.params.snapshot_values()
    }

    fn restore(&mut self, snap: &[Tensor]) {
        self.student.params.restore_values(snap);
    }
}

/// Distill a student encoder toward the frozen teacher's embeddings of the
/// aligned pivot sentences. Fails hard if validation loss does not improve
/// over the untrained initialization.
pub fn train_student(
    teacher: &SequenceEncoder,
    train: &AlignedText,
    valid: &AlignedText,
    loss: DistillLoss,
    student: &mut SequenceEncoder,
    cfg: &TrainConfig,
) -> TrainResult<TrainOutcome> {
    let teacher_guard = FrozenGuard::new(&teacher.id, &teacher.params);
    let train_targets = embed_all(teacher, &train.tgt)?;
    let val_targets = embed_all(teacher, &valid.tgt)?;
    let train_ids: Vec<Vec<u32>> = train.src.iter().map(|s| student.vocab.encode(s)).collect();
    let val_ids: Vec<Vec<u32>> = valid.src.iter().map(|s| student.vocab.encode(s)).collect();

    let adam = student.params.adam(cfg.optimizer);
    let mut task = StudentTask {
        student,
        adam,
        loss,
        train_ids,
        train_targets: EmbTarget::Values(train_targets),
        val_ids,
        val_targets,
    };
    let outcome = run_training(&mut task, cfg)?;
    teacher_guard.verify(&teacher.params)?;
    if outcome.best_val_loss >= outcome.initial_val_loss {
        return Err(TrainError::NoImprovement {
            initial: outcome.initial_val_loss,
            best: outcome.best_val_loss,
        });
    }
    Ok(outcome)
}

struct CeFinetuneTask<'a> {
    student: &'a mut SequenceEncoder,
    decoder: &'a EmbeddingConditionedDecoder,
    adam: Adam,
    train_ids: Vec<Vec<u32>>,
    train_targets: Vec<Vec<u32>>,
    val_ids: Vec<Vec<u32>>,
    val_targets: Vec<Vec<u32>>,
}

impl CeFinetuneTask<'_> {
    fn loss_graph(&self, ids: &[u32], targets: &[u32], train: bool) -> TrainResult<(Graph, Vec<NodeId>, f64)> {
        let mut g = Graph::new();
        let student_leaves = self.student.params.bind(&mut g, train)?;
        let decoder_leaves = self.decoder.params.bind(&mut g, false)?;
        let (_, emb) = self.student.encode_on(&mut g, &student_leaves, ids)?;
        let (_, loss) = self
            .decoder
            .teacher_forced_on(&mut g, &decoder_leaves, emb, targets)?;
        if train {
            g.backward(loss)?;
        }
        let v = g.value(loss).item();
        Ok((g, student_leaves, v))
    }
}

impl Task for CeFinetuneTask<'_> {
    fn train_len(&self) -> usize {
        self.train_ids.len()
    }

    fn example_loss(&mut self, idx: usize, _batch_idx: usize, _counter: u64) -> TrainResult<f64> {
        let ids = self.train_ids[idx].clone();
        let targets = self.train_targets[idx].clone();
        let (g, leaves, loss) = self.loss_graph(&ids, &targets, true)?;
        self.student.params.accumulate_grads(&g, &leaves);
        Ok(loss)
    }

    fn apply_batch(&mut self, batch_len: usize) -> TrainResult<()> {
        self.student.params.scale_grads(1.0 / batch_len as f64);
        self.student.params.adam_step(&mut self.adam)?;
        self.student.params.zero_grads();
        Ok(())
    }

    fn validate(&mut self) -> TrainResult<(f64, f64)> {
        let mut sum = 0.0;
        for (ids, targets) in self.val_ids.iter().zip(&self.val_targets) {
            sum += self.loss_graph(ids, targets, false)?.2;
        }
        let mean = sum / self.val_ids.len() as f64;
        Ok((mean, mean))
    }

    fn snapshot(&self) -> Vec<Tensor> {
        self.student.params.snapshot_values()
    }

    fn restore(&mut self, snap: &[Tensor]) {
        self.student.params.restore_values(snap);
    }
}

/// Fine-tune an MSE-distilled student through a frozen decoder's token CE.
/// The student must come from MSE distillation (`init_method`), mirroring
/// the stability requirement; the decoder is fingerprint-checked.
pub fn ce_finetune_student(
    init_method: &str,
    decoder: &EmbeddingConditionedDecoder,
    train: &AlignedText,
    valid: &AlignedText,
    student: &mut SequenceEncoder,
    cfg: &TrainConfig,
) -> TrainResult<TrainOutcome> {
    if init_method != "distill_mse" {
        return Err(TrainError::BadInit {
            got: init_method.to_string(),
        });
    }
    let decoder_guard = FrozenGuard::new(&decoder.id, &decoder.params);
    let train_ids: Vec<Vec<u32>> = train.src.iter().map(|s| student.vocab.encode(s)).collect();
    let val_ids: Vec<Vec<u32>> = valid.src.iter().map(|s| student.vocab.encode(s)).collect();
    let train_targets: Vec<Vec<u32>> =
        train.tgt.iter().map(|s| targets_of(decoder, s)).collect();
    let val_targets: Vec<Vec<u32>> =
        valid.tgt.iter().map(|s| targets_of(decoder, s)).collect();

    let adam = student.params.adam(cfg.optimizer);
    let mut task = CeFinetuneTask {
        student,
        decoder,
        adam,
        train_ids,
        train_targets,
        val_ids,
        val_targets,
    };
    let outcome = run_training(&mut task, cfg)?;
    decoder_guard.verify(&decoder.params)?;
    Ok(outcome)
}

/// Paired speech data: frame sequences with their transcripts (student
/// language) and written translations (pivot language).
pub struct SpeechData {
    pub frames: Vec<Vec<Vec<f64>>>,
    pub transcripts: Vec<Vec<String>>,
    pub translations: Vec<Vec<String>>,
}

struct SpeechStudentTask<'a> {
    encoder: &'a mut FrameEncoder,
    adam: Adam,
    mode: TeacherMode,
    frames: Vec<Vec<Vec<f64>>>,
    transcription_targets: Vec<Vec<f64>>,
    translation_targets: Vec<Vec<f64>>,
    val_frames: Vec<Vec<Vec<f64>>>,
    val_transcription: Vec<Vec<f64>>,
    val_translation: Vec<Vec<f64>>,
}

impl SpeechStudentTask<'_> {
    fn target_for(&self, idx: usize, batch_idx: usize) -> &[f64] {
        match self.mode {
            TeacherMode::Transcription => &self.transcription_targets[idx],
            TeacherMode::Translation => &self.translation_targets[idx],
            TeacherMode::Both => {
                if batch_idx % 2 == 0 {
                    &self.transcription_targets[idx]
                } else {
                    &self.translation_targets[idx]
                }
            }
        }
    }
}

impl Task for SpeechStudentTask<'_> {
    fn train_len(&self) -> usize {
        self.frames.len()
    }

    fn example_loss(&mut self, idx: usize, batch_idx: usize, _counter: u64) -> TrainResult<f64> {
        let target = self.target_for(idx, batch_idx).to_vec();
        let frames = self.frames[idx].clone();
        let mut g = Graph::new();
        let leaves = self.encoder.params.bind(&mut g, true)?;
        let emb = self.encoder.encode_on(&mut g, &leaves, &frames)?;
        let loss = distill_loss_on(&mut g, DistillLoss::Mse, emb, &target)?;
        g.backward(loss)?;
        self.encoder.params.accumulate_grads(&g, &leaves);
        Ok(g.value(loss).item())
    }

    fn apply_batch(&mut self, batch_len: usize) -> TrainResult<()> {
        self.encoder.params.scale_grads(1.0 / batch_len as f64);
        self.encoder.params.adam_step(&mut self.adam)?;
        self.encoder.params.zero_grads();
        Ok(())
    }

    fn validate(&mut self) -> TrainResult<(f64, f64)> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, frames) in self.val_frames.iter().enumerate() {
            let emb = self.encoder.encode(frames)?;
            match self.mode {
                TeacherMode::Transcription => {
                    sum += crate::space::mse_loss(&emb.values, &self.val_transcription[i])?;
                    count += 1;
                }
                TeacherMode::Translation => {
                    sum += crate::space::mse_loss(&emb.values, &self.val_translation[i])?;
                    count += 1;
                }
                TeacherMode::Both => {
                    sum += crate::space::mse_loss(&emb.values, &self.val_transcription[i])?;
                    sum += crate::space::mse_loss(&emb.values, &self.val_translation[i])?;
                    count += 2;
                }
            }
        }
        let mean = sum / count as f64;
        Ok((mean, mean))
    }

    fn snapshot(&self) -> Vec<Tensor> {
        self.encoder.params.snapshot_values()
    }

    fn restore(&mut self, snap: &[Tensor]) {
        self.encoder.params.restore_values(snap);
    }

    fn batch_tag(&self, batch_idx: usize) -> Option<String> {
        match self.mode {
            TeacherMode::Both => Some(
                if batch_idx % 2 == 0 {
                    "transcription".to_string()
                } else {
                    "translation".to_string()
                },
            ),
            _ => None,
        }
    }
}

/// Distill a frame encoder toward text embeddings. TRANSCRIPTION uses the
/// spoken language's text student on transcripts; TRANSLATION uses the
/// pivot teacher on written translations; BOTH alternates per batch.
pub fn train_speech_student(
    mode: TeacherMode,
    text_student: Option<&SequenceEncoder>,
    teacher: Option<&SequenceEncoder>,
    train: &SpeechData,
    valid: &SpeechData,
    encoder: &mut FrameEncoder,
    cfg: &TrainConfig,
) -> TrainResult<TrainOutcome> {
    let needs_student = matches!(mode, TeacherMode::Transcription | TeacherMode::Both);
    let needs_teacher = matches!(mode, TeacherMode::Translation | TeacherMode::Both);
    if needs_student && text_student.is_none() {
        return Err(TrainError::MissingPrerequisite {
            mode: mode.tag().to_string(),
            requirement: "the spoken language's text student".to_string(),
        });
    }
    if needs_teacher && teacher.is_none() {
        return Err(TrainError::MissingPrerequisite {
            mode: mode.tag().to_string(),
            requirement: "the pivot teacher encoder".to_string(),
        });
    }
    let student_guard = text_student.map(|e| FrozenGuard::new(&e.id, &e.params));
    let teacher_guard = teacher.map(|e| FrozenGuard::new(&e.id, &e.params));

    let zeros = vec![vec![0.0; encoder.d]; train.frames.len()];
    let val_zeros = vec![vec![0.0; encoder.d]; valid.frames.len()];
    let transcription_targets = match text_student {
        Some(enc) if needs_student => embed_all(enc, &train.transcripts)?,
        _ => zeros.clone(),
    };
    let val_transcription = match text_student {
        Some(enc) if needs_student => embed_all(enc, &valid.transcripts)?,
        _ => val_zeros.clone(),
    };
    let translation_targets = match teacher {
        Some(enc) if needs_teacher => embed_all(enc, &train.translations)?,
        _ => zeros,
    };
    let val_translation = match teacher {
        Some(enc) if needs_teacher => embed_all(enc, &valid.translations)?,
        _ => val_zeros,
    };

    let adam = encoder.params.adam(cfg.optimizer);
    let mut task = SpeechStudentTask {
        encoder,
        adam,
        mode,
        frames: train.frames.clone(),
        transcription_targets,
        translation_targets,
        val_frames: valid.frames.clone(),
        val_transcription,
        val_translation,
    };
    let outcome = run_training(&mut task, cfg)?;
    if let (Some(guard), Some(enc)) = (&student_guard, text_student) {
        guard.verify(&enc.params)?;
    }
    if let (Some(guard), Some(enc)) = (&teacher_guard, teacher) {
        guard.verify(&enc.params)?;
    }
    Ok(outcome)
}

/// Where a unit decoder's conditioning embeddings come from.
pub enum UnitSource<'a> {
    /// Frozen frame encoder over raw frames — no text anywhere.
    RawFrames(&'a FrameEncoder),
    /// Frozen pivot text encoder over transcripts.
    Transcripts(&'a SequenceEncoder),
}

/// Unit-decoder training data: the conditioning inputs plus normalized
/// unit target sequences.
pub struct UnitData {
    pub frames: Vec<Vec<Vec<f64>>>,
    pub transcripts: Vec<Vec<String>>,
    pub units: Vec<Vec<u32>>,
}

/// Train a unit decoder on normalized unit targets. The source encoder is
/// frozen; raw-frames training touches no text (auditable via the
/// provenance the caller records from `UnitSource`).
pub fn train_unit_decoder(
    source: UnitSource<'_>,
    train: &UnitData,
    valid: &UnitData,
    decoder: &mut UnitDecoder,
    cfg: &TrainConfig,
) -> TrainResult<TrainOutcome> {
    for (i, units) in train.units.iter().chain(valid.units.iter()).enumerate() {
        if units.windows(2).any(|w| w[0] == w[1]) {
            return Err(TrainError::UnnormalizedTargets { index: i });
        }
    }
    let guard = match &source {
        UnitSource::RawFrames(enc) => FrozenGuard::new(&enc.id, &enc.params),
        UnitSource::Transcripts(enc) => FrozenGuard::new(&enc.id, &enc.params),
    };
    let embed_units = |frames: &[Vec<Vec<f64>>], texts: &[Vec<String>]| -> TrainResult<Vec<Vec<f64>>> {
        match &source {
            UnitSource::RawFrames(enc) => frames
                .iter()
                .map(|f| Ok(enc.encode(f)?.values))
                .collect(),
            UnitSource::Transcripts(enc) => embed_all(enc, texts),
        }
    };
    let train_emb = embed_units(&train.frames, &train.transcripts)?;
    let val_emb = embed_units(&valid.frames, &valid.transcripts)?;
    let to_targets = |units: &[u32]| -> Vec<u32> {
        let mut t = Vec::with_capacity(units.len() + 2);
        t.push(BOS_ID);
        t.extend(units.iter().map(|u| u + UNIT_RESERVED as u32));
        t.push(EOS_ID);
        t
    };
    let train_targets: Vec<Vec<u32>> = train.units.iter().map(|u| to_targets(u)).collect();
    let val_targets: Vec<Vec<u32>> = valid.units.iter().map(|u| to_targets(u)).collect();

    let adam = decoder.params.adam(cfg.optimizer);
    let mut task = DecoderTask {
        dec: decoder,
        adam,
        objective: DecoderObjective::Ae,
        tgt_emb: train_emb,
        src_emb: Vec::new(),
        train_targets,
        val_tgt_emb: val_emb,
        val_src_emb: Vec::new(),
        val_targets,
    };
    let outcome = run_training(&mut task, cfg)?;
    match &source {
        UnitSource::RawFrames(enc) => guard.verify(&enc.params)?,
        UnitSource::Transcripts(enc) => guard.verify(&enc.params)?,
    }
    Ok(outcome)
}

struct JointAeTask<'a> {
    encoder: &'a mut SequenceEncoder,
    decoder: &'a mut EmbeddingConditionedDecoder,
    enc_adam: Adam,
    dec_adam: Adam,
    train_src: Vec<Vec<u32>>,
    train_targets: Vec<Vec<u32>>,
    val_src: Vec<Vec<u32>>,
    val_targets: Vec<Vec<u32>>,
}

impl Task for JointAeTask<'_> {
    fn train_len(&self) -> usize {
        self.train_src.len()
    }

    fn example_loss(&mut self, idx: usize, _batch_idx: usize, _counter: u64) -> TrainResult<f64> {
        let ids = self.train_src[idx].clone();
        let targets = self.train_targets[idx].clone();
        let mut g = Graph::new();
        let enc_leaves = self.encoder.params.bind(&mut g, true)?;
        let dec_leaves = self.decoder.params.bind(&mut g, true)?;
        let (_, emb) = self.encoder.encode_on(&mut g, &enc_leaves, &ids)?;
        let (_, loss) = self
            .decoder
            .teacher_forced_on(&mut g, &dec_leaves, emb, &targets)?;
        g.backward(loss)?;
        self.encoder.params.accumulate_grads(&g, &enc_leaves);
        self.decoder.params.accumulate_grads(&g, &dec_leaves);
        Ok(g.value(loss).item())
    }

    fn apply_batch(&mut self, batch_len: usize) -> TrainResult<()> {
        let scale = 1.0 / batch_len as f64;
        self.encoder.params.scale_grads(scale);
        self.decoder.params.scale_grads(scale);
        self.encoder.params.adam_step(&mut self.enc_adam)?;
        self.decoder.params.adam_step(&mut self.dec_adam)?;
        self.encoder.params.zero_grads();
        self.decoder.params.zero_grads();
        Ok(())
    }

    fn validate(&mut self) -> TrainResult<(f64, f64)> {
        let embs: Vec<Vec<f64>> = self
            .val_src
            .iter()
            .map(|ids| Ok::<_, TrainError>(self.encoder.embed_sentence(ids)?.values))
            .collect::<TrainResult<_>>()?;
        validate_decoder(self.decoder, &embs, &self.val_targets)
    }

    fn snapshot(&self) -> Vec<Tensor> {
        let mut snap = self.encoder.params.snapshot_values();
        snap.extend(self.decoder.params.snapshot_values());
        snap
    }

    fn restore(&mut self, snap: &[Tensor]) {
        let enc_len = self.encoder.params.len();
        self.encoder.params.restore_values(&snap[..enc_len]);
        self.decoder.params.restore_values(&snap[enc_len..]);
    }
}

/// Pretrain the pivot teacher: a joint encoder + decoder auto-encoder on
/// raw pivot text. The encoder is then frozen as the teacher space every
/// student distills toward (the stand-in for a pretrained multilingual
/// embedding model); the decoder is kept as the "original decoder".
pub fn pretrain_teacher(
    train: &[Vec<String>],
    valid: &[Vec<String>],
    encoder: &mut SequenceEncoder,
    decoder: &mut EmbeddingConditionedDecoder,
    cfg: &TrainConfig,
) -> TrainResult<TrainOutcome> {
    let train_src: Vec<Vec<u32>> = train.iter().map(|s| encoder.vocab.encode(s)).collect();
    let val_src: Vec<Vec<u32>> = valid.iter().map(|s| encoder.vocab.encode(s)).collect();
    let train_targets: Vec<Vec<u32>> = train.iter().map(|s| targets_of(decoder, s)).collect();
    let val_targets: Vec<Vec<u32>> = valid.iter().map(|s| targets_of(decoder, s)).collect();
    let enc_adam = encoder.params.adam(cfg.optimizer);
    let dec_adam = decoder.params.adam(cfg.optimizer);
    let mut task = JointAeTask {
        encoder,
        decoder,
        enc_adam,
        dec_adam,
        train_src,
        train_targets,
        val_src,
        val_targets,
    };
    run_training(&mut task, cfg)
}
