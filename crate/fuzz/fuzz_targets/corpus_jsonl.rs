#![no_main]
//! JSONL corpus loader on arbitrary bytes: must reject malformed input
//! with a structured error, never panic, and round-trip whatever it
//! accepts.

use libfuzzer_sys::fuzz_target;

use embedpipe::corpus::{parse_corpus, save_corpus, Split};

fuzz_target!(|data: &[u8]| {
    let langs = vec!["L0".to_string()];
    if let Ok(corpus) = parse_corpus(data, Split::Train, &langs) {
        // Anything accepted must serialize and re-parse to the same records.
        let dir = std::env::temp_dir().join(format!("fuzz-corpus-{}", std::process::id()));
        let _ = std::fs::create_dir_all(&dir);
        let path = dir.join("roundtrip.jsonl");
        if save_corpus(&corpus, &path).is_ok() {
            let bytes = std::fs::read(&path).unwrap();
            let again = parse_corpus(&bytes, Split::Train, &langs).expect("round trip parses");
            assert_eq!(again.len(), corpus.len());
        }
        let _ = std::fs::remove_file(&path);
    }
});
