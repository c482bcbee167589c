use embedpipe::corpus::{base_vocabulary, gen_base_corpus, Grammar};
use embedpipe::models::{EmbeddingConditionedDecoder, Pooling, SequenceEncoder};
use embedpipe::tensor::AdamConfig;
use embedpipe::train::{pretrain_teacher, TrainConfig};
use std::time::Instant;

fn main() {
    let g = Grammar::default();
    let vocab = base_vocabulary(&g);
    let train = gen_base_corpus(42, 800, &g);
    let valid = gen_base_corpus(43, 150, &g);
    let mut enc = SequenceEncoder::new("t", vocab.clone(), 64, 64, Pooling::Max, 1);
    let mut dec = EmbeddingConditionedDecoder::new("d", vocab, 64, 64, 2);
    let cfg = TrainConfig {
        seed: 3, epochs: 3, batch_size: 16,
        optimizer: AdamConfig { lr: 2e-3, ..Default::default() },
        patience: 10, validate_every: 1,
    };
    let t0 = Instant::now();
    let out = pretrain_teacher(&train, &valid, &mut enc, &mut dec, &cfg).unwrap();
    println!("3 epochs x 800 sentences: {:?}  val_loss {:.4} acc {:.4}",
        t0.elapsed(), out.best_val_loss, out.final_metrics["val_metric"]);
}
