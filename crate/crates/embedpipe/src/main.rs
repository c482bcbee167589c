use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use embedpipe::config::ExperimentConfig;
use embedpipe::corpus::Split;
use embedpipe::dataset::build_vocoder_table;
use embedpipe::models::{Pooling, SequenceEncoder};
use embedpipe::registry::{compose, LoadedModule, Registry};
use embedpipe::space::distance_report;
use embedpipe::suite::{
    self, checkpoints_dir, embeddings_for_distances, eval_speech_to_speech, eval_speech_to_text,
    eval_text_pairs, reports_dir, run_paper_suite, SuiteCtx,
};
use embedpipe::train::{DecoderObjective, DistillLoss, TeacherMode};

/// Modular translation through a shared fixed-size sentence-embedding
/// space: synthetic corpora, distilled encoders, embedding-conditioned
/// decoders, and zero-shot composition.
#[derive(Parser)]
#[command(name = "embedpipe", version, about)]
struct Cli {
    /// Experiment config (JSON). The output directory comes from the
    /// config's out_dir, overridable with EMBEDPIPE_OUT.
    #[arg(long, global = true, default_value = "configs/default.json")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus files, codebook and vocoder table.
    GenData,
    /// Pretrain the pivot teacher (and keep its original decoder).
    PretrainTeacher,
    /// Distill a text student toward the frozen teacher.
    TrainStudent(TrainStudentArgs),
    /// Train a decoder under one of the three objectives.
    TrainDecoder(TrainDecoderArgs),
    /// Distill a frame encoder toward text embeddings.
    TrainSpeechStudent(TrainSpeechArgs),
    /// Train the pivot unit decoder.
    TrainUnitDecoder(TrainUnitArgs),
    /// Compose a registered encoder with a registered decoder and score
    /// the pair on a split.
    ComposeEval(ComposeEvalArgs),
    /// Per-language L2² distances to pivot embeddings.
    ReportDistances(ReportDistancesArgs),
    /// The full experiment: all trainings, compositions, and the
    /// consolidated report.
    RunPaperSuite,
}

#[derive(Args)]
struct TrainStudentArgs {
    #[arg(long)]
    lang: String,
    #[arg(long, value_enum, default_value_t = LossArg::Mse)]
    loss: LossArg,
    #[arg(long, value_enum, default_value_t = PoolingArg::Max)]
    pooling: PoolingArg,
    /// Replication seed (defaults to the config's first seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Frozen decoder id for --loss ce fine-tuning.
    #[arg(long)]
    decoder: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    Cosine,
    /// CE fine-tune through a frozen decoder (requires --decoder and an
    /// MSE-distilled student for the language).
    Ce,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Max,
    Bos,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Max => Pooling::Max,
            PoolingArg::Bos => Pooling::Bos,
        }
    }
}

#[derive(Args)]
struct TrainDecoderArgs {
    #[arg(long, value_enum)]
    objective: ObjectiveArg,
    /// Language the decoder emits (default: the pivot).
    #[arg(long)]
    target_lang: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Ae,
    AeNoise,
    AeBitext,
}

#[derive(Args)]
struct TrainSpeechArgs {
    #[arg(long)]
    lang: String,
    #[arg(long, value_enum, default_value_t = TeacherModeArg::Transcription)]
    teacher_mode: TeacherModeArg,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TeacherModeArg {
    Transcription,
    Translation,
    Both,
}

impl From<TeacherModeArg> for TeacherMode {
    fn from(m: TeacherModeArg) -> Self {
        match m {
            TeacherModeArg::Transcription => TeacherMode::Transcription,
            TeacherModeArg::Translation => TeacherMode::Translation,
            TeacherModeArg::Both => TeacherMode::Both,
        }
    }
}

#[derive(Args)]
struct TrainUnitArgs {
    #[arg(long, value_parser = ["raw", "transcripts"])]
    source: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ComposeEvalArgs {
    #[arg(long)]
    encoder: String,
    #[arg(long)]
    decoder: String,
    #[arg(long, value_parser = ["train", "valid", "test"], default_value = "test")]
    split: String,
}

#[derive(Args)]
struct ReportDistancesArgs {
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Usage/config problems exit 2; runtime failures exit 1.
fn exit_code_for(e: &anyhow::Error) -> u8 {
    let msg = format!("{e:#}");
    let usage = e.downcast_ref::<embedpipe::config::ConfigError>().is_some()
        || msg.contains("unknown module id")
        || msg.contains("dimension mismatch")
        || msg.contains("is not an encoder")
        || msg.contains("is not a decoder")
        || msg.contains("usage:");
    if usage {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(&cli.config)
        .with_context(|| format!("loading config {}", cli.config.display()))?;
    let out = out_dir(&cfg);

    let result = dispatch(&cli.command, &cfg, &out);
    if result.is_err() && writes_artifacts(&cli.command) {
        // Leave a marker so partial artifacts are recognizable.
        let _ = std::fs::create_dir_all(&out);
        let _ = std::fs::write(out.join("FAILED"), b"suite or training failed; artifacts may be partial\n");
    } else if result.is_ok() {
        let _ = std::fs::remove_file(out.join("FAILED"));
    }
    result
}

fn writes_artifacts(cmd: &Command) -> bool {
    !matches!(cmd, Command::ComposeEval(_) | Command::ReportDistances(_))
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os("EMBEDPIPE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.out_dir.clone())
}

fn dispatch(cmd: &Command, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    match cmd {
        Command::GenData => {
            let ctx = SuiteCtx::new(cfg.clone(), out)?;
            let table = build_vocoder_table(&ctx.ds, &ctx.pivot)?;
            std::fs::write(
                suite::data_dir(out).join("vocoder.json"),
                serde_json::to_string(&table)?,
            )?;
            println!(
                "data ready under {} (corpus hash {})",
                suite::data_dir(out).display(),
                ctx.ds.corpus_hash
            );
            Ok(())
        }
        Command::PretrainTeacher => {
            let ctx = SuiteCtx::new(cfg.clone(), out)?;
            let (_, modules) = ctx.build_teacher()?;
            let mut registry = Registry::open_or_create(&checkpoints_dir(out))?;
            for m in &modules {
                registry.register(&m.meta, &m.file)?;
            }
            println!(
                "teacher ready: val_loss {:.4}",
                modules[0].outcome.best_val_loss
            );
            Ok(())
        }
        Command::TrainStudent(args) => {
            let ctx = SuiteCtx::new(cfg.clone(), out)?;
            let seed = args.seed.unwrap_or(cfg.seeds[0]);
            let mut registry = Registry::open_or_create(&checkpoints_dir(out))?;
            let teacher = load_text_encoder(&registry, "teacher")?;
            match args.loss {
                LossArg::Mse | LossArg::Cosine => {
                    let loss = if matches!(args.loss, LossArg::Mse) {
                        DistillLoss::Mse
                    } else {
                        DistillLoss::Cosine
                    };
                    let (_, module) =
                        ctx.train_text_student(&teacher, &args.lang, loss, args.pooling.into(), seed)?;
                    registry.register(&module.meta, &module.file)?;
                    println!(
                        "{}: val_loss {:.6}",
                        module.meta.id, module.outcome.best_val_loss
                    );
                }
                LossArg::Ce => {
                    let dec_id = args
                        .decoder
                        .as_deref()
                        .ok_or_else(|| anyhow!("usage: --loss ce requires --decoder <id>"))?;
                    let decoder = match registry.load_module(dec_id)? {
                        LoadedModule::Decoder(d, _) => d,
                        _ => bail!("{} is not a decoder", dec_id),
                    };
                    let student_id = format!("enc-{}-s{seed}", args.lang);
                    let mut student = load_text_encoder(&registry, &student_id)?;
                    let (outcome, provenance) =
                        ctx.ce_finetune(&mut student, &decoder, &args.lang, seed)?;
                    let module = ctx.save_finetuned_student(&student, &args.lang, seed, provenance, outcome)?;
                    registry.register(&module.meta, &module.file)?;
                    println!(
                        "{}: val_ce {:.6}",
                        module.meta.id, module.outcome.best_val_loss
                    );
                }
            }
            Ok(())
        }
        Command::TrainDecoder(args) => {
            let ctx = SuiteCtx::new(cfg.clone(), out)?;
            let seed = args.seed.unwrap_or(cfg.seeds[0]);
            let mut registry = Registry::open_or_create(&checkpoints_dir(out))?;
            let teacher = load_text_encoder(&registry, "teacher")?;
            let target = args.target_lang.clone().unwrap_or_else(|| ctx.pivot.clone());
            let objective = match args.objective {
                ObjectiveArg::Ae => DecoderObjective::Ae,
                ObjectiveArg::AeNoise => DecoderObjective::AeNoise {
                    noise: embedpipe::space::NoiseSpec {
                        alpha: cfg.noise.alpha,
                        mode: cfg.noise.mode,
                        seed: cfg.noise.seed ^ seed,
                    },
                    prob: cfg.noise.prob,
                },
                ObjectiveArg::AeBitext => DecoderObjective::AeBitext {
                    source_lang: cfg.bitext.source_lang.clone(),
                    mix: cfg.bitext.mix,
                },
            };
            let module = if target == ctx.pivot {
                let bitext_enc = if matches!(objective, DecoderObjective::AeBitext { .. }) {
                    Some(load_text_encoder(
                        &registry,
                        &format!("enc-{}-s{seed}", cfg.bitext.source_lang),
                    )?)
                } else {
                    None
                };
                let (_, m) =
                    ctx.train_decoder_variant(&teacher, bitext_enc.as_ref(), objective, seed)?;
                m
            } else {
                let (_, m) = ctx.train_nonpivot_decoder(&teacher, &target, objective, seed)?;
                m
            };
            registry.register(&module.meta, &module.file)?;
            println!(
                "{}: val_loss {:.4} acc {:.4}",
                module.meta.id,
                module.outcome.best_val_loss,
                module
                    .outcome
                    .final_metrics
                    .get("val_metric")
                    .copied()
                    .unwrap_or(0.0)
            );
            Ok(())
        }
        Command::TrainSpeechStudent(args) => {
            let ctx = SuiteCtx::new(cfg.clone(), out)?;
            let seed = args.seed.unwrap_or(cfg.seeds[0]);
            let mut registry = Registry::open_or_create(&checkpoints_dir(out))?;
            let teacher = load_text_encoder(&registry, "teacher")?;
            let mode: TeacherMode = args.teacher_mode.into();
            let text_student = if args.lang == ctx.pivot {
                Some(load_text_encoder(&registry, "teacher")?)
            } else if matches!(mode, TeacherMode::Transcription | TeacherMode::Both) {
                Some(load_text_encoder(
                    &registry,
                    &format!("enc-{}-s{seed}", args.lang),
                )?)
            } else {
                None
            };
            let teacher_opt = if matches!(mode, TeacherMode::Translation | TeacherMode::Both) {
                Some(&teacher)
            } else {
                None
            };
            let (_, module) = ctx.train_frame_student(
                &args.lang,
                mode,
                text_student.as_ref(),
                teacher_opt,
                seed,
            )?;
            registry.register(&module.meta, &module.file)?;
            println!(
                "{}: val_mse {:.6}",
                module.meta.id, module.outcome.best_val_loss
            );
            Ok(())
        }
        Command::TrainUnitDecoder(args) => {
            let ctx = SuiteCtx::new(cfg.clone(), out)?;
            let seed = args.seed.unwrap_or(cfg.seeds[0]);
            let mut registry = Registry::open_or_create(&checkpoints_dir(out))?;
            let module = match args.source.as_str() {
                "raw" => {
                    let fe_id = format!("enc-frames-{}-s{seed}", ctx.pivot);
                    let fe = match registry.load_module(&fe_id)? {
                        LoadedModule::FrameEncoder(e) => e,
                        _ => bail!("{} is not a frame encoder", fe_id),
                    };
                    ctx.train_unit_decoder_variant("raw", Some(&fe), None, seed)?.1
                }
                _ => {
                    let teacher = load_text_encoder(&registry, "teacher")?;
                    ctx.train_unit_decoder_variant("transcripts", None, Some(&teacher), seed)?
                        .1
                }
            };
            registry.register(&module.meta, &module.file)?;
            println!(
                "{}: val_loss {:.4} acc {:.4}",
                module.meta.id,
                module.outcome.best_val_loss,
                module
                    .outcome
                    .final_metrics
                    .get("val_metric")
                    .copied()
                    .unwrap_or(0.0)
            );
            Ok(())
        }
        Command::ComposeEval(args) => {
            let ctx = SuiteCtx::new(cfg.clone(), out)?;
            let registry = Registry::open_or_create(&checkpoints_dir(out))?;
            let split = match args.split.as_str() {
                "train" => Split::Train,
                "valid" => Split::Valid,
                _ => Split::Test,
            };
            let corpus = ctx.ds.split(split);
            let pipeline = compose(&args.encoder, &args.decoder, &registry, cfg.max_len)?;
            let src_lang = pipeline
                .src_language
                .clone()
                .ok_or_else(|| anyhow!("encoder {} has no language", args.encoder))?;
            let tgt_lang = pipeline
                .tgt_language
                .clone()
                .ok_or_else(|| anyhow!("decoder {} has no language", args.decoder))?;
            let pair = match (&pipeline.input_modality, &pipeline.decoder_kind) {
                (embedpipe::train::Modality::Speech, embedpipe::train::ModuleKind::UnitDecoder) => {
                    let table = build_vocoder_table(&ctx.ds, &ctx.pivot)?;
                    eval_speech_to_speech(&pipeline, corpus, &src_lang, &tgt_lang, &table)?
                }
                (embedpipe::train::Modality::Speech, _) => {
                    eval_speech_to_text(&pipeline, corpus, &src_lang, &tgt_lang)?
                }
                _ => eval_text_pairs(&pipeline, corpus, &src_lang, &tgt_lang, None)?.0,
            };
            let report = serde_json::json!({
                "pair": pair,
                "config_hash": ctx.config_hash,
                "split": args.split,
            });
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            std::fs::create_dir_all(reports_dir(out))?;
            std::fs::write(
                reports_dir(out).join(format!("eval-{}-{}.json", args.encoder, args.decoder)),
                text,
            )?;
            Ok(())
        }
        Command::ReportDistances(args) => {
            let ctx = SuiteCtx::new(cfg.clone(), out)?;
            let seed = args.seed.unwrap_or(cfg.seeds[0]);
            let registry = Registry::open_or_create(&checkpoints_dir(out))?;
            let teacher = load_text_encoder(&registry, "teacher")?;
            let mut encoders: BTreeMap<String, SequenceEncoder> = BTreeMap::new();
            for lang in cfg.languages.iter().skip(1) {
                let id = format!("enc-{}-s{seed}", lang.spec.id);
                encoders.insert(lang.spec.id.clone(), load_text_encoder(&registry, &id)?);
            }
            let refs: BTreeMap<String, &SequenceEncoder> =
                encoders.iter().map(|(k, v)| (k.clone(), v)).collect();
            let (per_lang, pivot_embs) =
                embeddings_for_distances(&refs, &teacher, &ctx.ds.test, &ctx.pivot)?;
            let report = distance_report(&per_lang, &pivot_embs)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            std::fs::create_dir_all(reports_dir(out))?;
            std::fs::write(reports_dir(out).join(format!("distances-s{seed}.json")), text)?;
            Ok(())
        }
        Command::RunPaperSuite => {
            let report = run_paper_suite(cfg, out)?;
            println!(
                "suite complete: {} seeds, report at {}",
                report.seeds.len(),
                reports_dir(out).join("consolidated.json").display()
            );
            Ok(())
        }
    }
}

fn load_text_encoder(registry: &Registry, id: &str) -> Result<SequenceEncoder> {
    match registry.load_module(id)? {
        LoadedModule::TextEncoder(e) => Ok(e),
        _ => bail!("{} is not a text encoder", id),
    }
}
