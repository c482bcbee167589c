#![no_main]
//! Unit codebook deserialization and assignment on arbitrary JSON.

use libfuzzer_sys::fuzz_target;

use embedpipe::corpus::{extract_units, normalize_units, UnitCodebook};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(book) = serde_json::from_str::<UnitCodebook>(text) else { return };
    if book.k() == 0 {
        return;
    }
    let dim = book.dim();
    if dim == 0 || dim > 64 {
        return;
    }
    let frames: Vec<Vec<f64>> = vec![vec![0.25; dim], vec![-1.0; dim]];
    if let Ok(units) = extract_units(&frames, &book) {
        let collapsed = normalize_units(&units);
        assert!(!collapsed.is_empty());
        assert!(collapsed.len() <= units.len());
    }
    // Dimension mismatches must error, not panic.
    let _ = book.assign(&vec![0.0; dim + 1]);
});
