use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{CorpusError, CorpusRecord, CorpusResult, ParallelCorpus, Split};

/// One JSON record per line. Text round-trips byte-stable; frame values
/// round-trip exactly (serde_json prints the shortest exact f64 form).
pub fn save_corpus(corpus: &ParallelCorpus, path: &Path) -> CorpusResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in &corpus.records {
        serde_json::to_writer(&mut w, rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse JSONL corpus bytes. Every record must carry all of
/// `expected_langs`; malformed lines are reported with their line number.
/// Public at byte level so untrusted input can be exercised directly.
pub fn parse_corpus(
    bytes: &[u8],
    split: Split,
    expected_langs: &[String],
) -> CorpusResult<ParallelCorpus> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
                line: i + 1,
                source,
            })?;
        for lang in expected_langs {
            if !rec.text.contains_key(lang) {
                return Err(CorpusError::MissingLanguage {
                    id: rec.id,
                    lang: lang.clone(),
                });
            }
        }
        records.push(rec);
    }
    Ok(ParallelCorpus { split, records })
}

/// Load one split from disk.
pub fn load_corpus(
    path: &Path,
    split: Split,
    expected_langs: &[String],
) -> CorpusResult<ParallelCorpus> {
    let bytes = std::fs::read(path)?;
    parse_corpus(&bytes, split, expected_langs)
}
