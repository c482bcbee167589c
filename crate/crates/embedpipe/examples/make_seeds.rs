//! Writes fuzz corpus seeds and the shipped default config.
use embedpipe::config::ExperimentConfig;
use embedpipe::models::{Pooling, SequenceEncoder, Vocabulary};
use embedpipe::train::{save_checkpoint, CheckpointMeta, Modality, ModuleKind, ProvenanceMeta};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

fn main() {
    let root = Path::new(".");
    // Default config.
    fs::create_dir_all(root.join("configs")).unwrap();
    let cfg = ExperimentConfig::default_config();
    fs::write(
        root.join("configs/default.json"),
        serde_json::to_string_pretty(&cfg).unwrap(),
    )
    .unwrap();

    // Seeds.
    let seed_dir = |name: &str| {
        let d = root.join("fuzz/corpus").join(name);
        fs::create_dir_all(&d).unwrap();
        d
    };

    let d = seed_dir("corpus_jsonl");
    fs::write(
        d.join("two_records.jsonl"),
        concat!(
            "{\"id\":0,\"text\":{\"L0\":[\"the\",\"cat\",\"sees\"],\"L1\":[\"a\",\"b\",\"c\"]},\"frames\":{\"L0\":[[0.1,-0.2],[0.3,0.4]]},\"units\":{\"L0\":[3,3,5]}}\n",
            "{\"id\":1,\"text\":{\"L0\":[\"he\",\"finds\",\"a\",\"door\"]}}\n",
        ),
    )
    .unwrap();

    let d = seed_dir("checkpoint_parse");
    let vocab = Vocabulary::new((0..6).map(|i| format!("w{i}"))).unwrap();
    let enc = SequenceEncoder::new("seed-enc", vocab, 4, 3, Pooling::Max, 1);
    let mut meta = CheckpointMeta {
        format: String::new(),
        id: "seed-enc".into(),
        kind: ModuleKind::TextEncoder,
        language: Some("L0".into()),
        modality: Modality::Text,
        d: 3,
        h: 4,
        f: None,
        pooling: Some(Pooling::Max),
        vocab_tokens: enc.vocab.content_tokens().map(String::from).collect(),
        vocab_hash: enc.vocab.hash(),
        seed: 1,
        config_hash: "seed".into(),
        corpus_hash: "seed".into(),
        provenance: ProvenanceMeta::default(),
        metrics: BTreeMap::new(),
        arrays: Vec::new(),
        payload_sha256: String::new(),
    };
    save_checkpoint(&d.join("tiny.ckpt"), &mut meta, &enc.params).unwrap();

    let d = seed_dir("experiment_config");
    fs::write(
        d.join("default.json"),
        serde_json::to_string(&cfg).unwrap(),
    )
    .unwrap();

    let d = seed_dir("codebook_json");
    fs::write(
        d.join("tiny.json"),
        "{\"centroids\":[[0.0,1.0],[2.0,-1.0],[0.5,0.5]]}",
    )
    .unwrap();
    println!("seeds written");
}
