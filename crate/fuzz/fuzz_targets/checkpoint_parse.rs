#![no_main]
//! Checkpoint parser on arbitrary bytes: header line + float32 payload.
//! Must never panic; tampering must fail the payload hash verification.

use libfuzzer_sys::fuzz_target;

use embedpipe::registry::LoadedModule;
use embedpipe::train::parse_checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok((meta, arrays)) = parse_checkpoint(data) {
        // A verified checkpoint must rebuild a model or fail cleanly.
        let _ = LoadedModule::from_checkpoint(&meta, &arrays);
    }
});
