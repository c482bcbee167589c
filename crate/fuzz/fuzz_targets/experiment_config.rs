#![no_main]
//! Experiment config parsing + validation on arbitrary JSON text.

use libfuzzer_sys::fuzz_target;

use embedpipe::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = serde_json::from_str::<ExperimentConfig>(text) {
            // Validation must be a pure accept/reject, never a panic.
            let _ = cfg.validate();
            let _ = cfg.hash();
        }
    }
});
