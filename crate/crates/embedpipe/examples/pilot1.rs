use embedpipe::config::ExperimentConfig;
use embedpipe::suite::run_paper_suite;
use std::time::Instant;

fn main() {
    let mut cfg = ExperimentConfig::default_config();
    cfg.seeds = vec![1];
    cfg.out_dir = "/tmp/pilot_run".into();
    let _ = std::fs::remove_dir_all("/tmp/pilot_run");
    let t0 = Instant::now();
    let report = run_paper_suite(&cfg, std::path::Path::new("/tmp/pilot_run")).unwrap();
    println!("=== suite (1 seed) in {:?} ===", t0.elapsed());
    println!("teacher: val_loss {:.4} acc {:.4}", report.teacher.val_loss, report.teacher.val_token_accuracy);
    let seed = &report.per_seed["1"];
    for (k, v) in &seed.students {
        println!("student {k}: init {:.4} -> best {:.6}", v.initial_val_loss, v.best_val_loss);
    }
    for (k, v) in &seed.speech_students {
        println!("speech {k}: init {:.4} -> best {:.6}", v.initial_val_loss, v.best_val_loss);
    }
    for (k, v) in &seed.decoders {
        println!("decoder {k}: val {:.4} acc {:.4}", v.val_loss, v.val_token_accuracy);
    }
    for (k, v) in &seed.unit_decoders {
        println!("unit dec {k}: val {:.4} acc {:.4}", v.val_loss, v.val_token_accuracy);
    }
    println!("--- t2t ---");
    for (k, v) in &seed.t2t {
        let bl: Vec<String> = v.by_length.as_ref().map(|b| b.bleu.iter().map(|x| x.map(|y| format!("{y:.1}")).unwrap_or("-".into())).collect()).unwrap_or_default();
        println!("{k}: BLEU {:.2} zs={} by_len={:?}", v.bleu, v.zero_shot, bl);
    }
    println!("--- s2t ---");
    for (k, v) in &seed.s2t {
        println!("{k}: BLEU {:.2} zs={}", v.bleu, v.zero_shot);
    }
    println!("--- s2s ---");
    for (k, v) in &seed.s2s {
        println!("{k}: BLEU {:.2} zs={}", v.bleu, v.zero_shot);
    }
    println!("--- distances (trained) ---");
    for (k, v) in &seed.distances_trained {
        println!("{k}: mean {:.4} p50 {:.4}", v.mean_l2sq, v.p50);
    }
    println!("--- distances (untrained) ---");
    for (k, v) in &seed.distances_untrained {
        println!("{k}: mean {:.4} p50 {:.4}", v.mean_l2sq, v.p50);
    }
}
