use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Length buckets used everywhere BLEU is reported by sentence length.
pub const LENGTH_BUCKETS: [(usize, usize); 4] = [(1, 10), (11, 20), (21, 35), (36, usize::MAX)];

pub(crate) fn bucket_of(len: usize) -> usize {
    match len {
        0..=10 => 0,
        11..=20 => 1,
        21..=35 => 2,
        _ => 3,
    }
}

const DET: &[&str] = &["the", "a", "this", "that"];
const ADJ: &[&str] = &[
    "big", "small", "red", "blue", "old", "new", "happy", "quiet", "bright", "cold",
];
const NOUN: &[&str] = &[
    "cat", "dog", "bird", "tree", "house", "river", "stone", "cloud", "child", "king", "garden",
    "road", "ship", "star", "book", "door",
];
const VERB: &[&str] = &[
    "sees", "finds", "takes", "makes", "holds", "moves", "keeps", "gives", "shows", "hears",
    "builds", "paints",
];
const ADV: &[&str] = &["quickly", "slowly", "gently", "proudly", "quietly", "bravely"];
const PREP: &[&str] = &["near", "under", "over", "beside", "behind", "within"];
const CONN: &[&str] = &["and", "but", "while", "because", "then", "although"];
const PRON: &[&str] = &["he", "she", "it", "they"];

const MIN_LEN: usize = 3;
const MAX_LEN: usize = 40;
const MIN_CLAUSE: usize = 2;
const MAX_CLAUSE: usize = 12;

/// Probabilistic template grammar over 64 content words. Adjacent tokens
/// always come from different categories, so sentences never contain an
/// immediate token repeat (which keeps unit collapsing lossless).
///
/// Sentence lengths are sampled bucket-first so every BLEU length bucket
/// stays populated.
#[derive(Debug, Clone)]
pub struct Grammar {
    bucket_weights: [f64; 4],
}

impl Default for Grammar {
    fn default() -> Self {
        Self {
            bucket_weights: [0.32, 0.34, 0.21, 0.13],
        }
    }
}

impl Grammar {
    pub fn vocab_size(&self) -> usize {
        DET.len()
            + ADJ.len()
            + NOUN.len()
            + VERB.len()
            + ADV.len()
            + PREP.len()
            + CONN.len()
            + PRON.len()
    }

    /// All content words, in a fixed order.
    pub fn words(&self) -> impl Iterator<Item = &'static str> {
        DET.iter()
            .chain(ADJ)
            .chain(NOUN)
            .chain(VERB)
            .chain(ADV)
            .chain(PREP)
            .chain(CONN)
            .chain(PRON)
            .copied()
    }

    /// One sentence from stream `index` of `seed`.
    pub fn sentence(&self, seed: u64, index: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let target = self.sample_length(&mut rng);
        let mut out: Vec<&'static str> = Vec::with_capacity(target);
        let mut remaining = target;
        let mut first = true;
        while remaining > 0 {
            let overhead = usize::from(!first);
            let budget = remaining - overhead;
            let max = budget.min(MAX_CLAUSE);
            let sizes: Vec<usize> = (MIN_CLAUSE..=max)
                .filter(|s| {
                    let left = budget - s;
                    left == 0 || left >= MIN_CLAUSE + 1
                })
                .collect();
            let size = sizes[rng.gen_range(0..sizes.len())];
            if !first {
                out.push(pick(CONN, &mut rng));
            }
            clause(size, &mut out, &mut rng);
            remaining -= size + overhead;
            first = false;
        }
        debug_assert_eq!(out.len(), target);
        out.into_iter().map(|s| s.to_string()).collect()
    }

    fn sample_length(&self, rng: &mut ChaCha8Rng) -> usize {
        let total: f64 = self.bucket_weights.iter().sum();
        let mut roll = rng.gen_range(0.0..total);
        let mut bucket = 3;
        for (i, w) in self.bucket_weights.iter().enumerate() {
            if roll < *w {
                bucket = i;
                break;
            }
            roll -= w;
        }
        let (lo, hi) = LENGTH_BUCKETS[bucket];
        let lo = lo.max(MIN_LEN);
        let hi = hi.min(MAX_LEN);
        rng.gen_range(lo..=hi)
    }
}

fn pick(words: &[&'static str], rng: &mut ChaCha8Rng) -> &'static str {
    words[rng.gen_range(0..words.len())]
}

/// NP of exactly `size` ∈ 1..=3 tokens.
fn noun_phrase(size: usize, out: &mut Vec<&'static str>, rng: &mut ChaCha8Rng) {
    match size {
        1 => out.push(pick(PRON, rng)),
        2 => {
            out.push(pick(DET, rng));
            out.push(pick(NOUN, rng));
        }
        _ => {
            out.push(pick(DET, rng));
            out.push(pick(ADJ, rng));
            out.push(pick(NOUN, rng));
        }
    }
}

/// Clause of exactly `size` ∈ 2..=12 tokens: NP then VP.
fn clause(size: usize, out: &mut Vec<&'static str>, rng: &mut ChaCha8Rng) {
    let np_sizes: Vec<usize> = (1..=3usize)
        .filter(|a| size >= a + 1 && size - a <= 9)
        .collect();
    let np = np_sizes[rng.gen_range(0..np_sizes.len())];
    noun_phrase(np, out, rng);
    verb_phrase(size - np, out, rng);
}

/// VP of exactly `size` ∈ 1..=9 tokens:
/// verb [adverb] [object NP] [PP = prep + NP].
fn verb_phrase(size: usize, out: &mut Vec<&'static str>, rng: &mut ChaCha8Rng) {
    let mut combos: Vec<(usize, usize, usize)> = Vec::new();
    for adv in 0..=1usize {
        for np in [0usize, 1, 2, 3] {
            for pp in [0usize, 2, 3, 4] {
                if 1 + adv + np + pp == size {
                    combos.push((adv, np, pp));
                }
            }
        }
    }
    let (adv, np, pp) = combos[rng.gen_range(0..combos.len())];
    out.push(pick(VERB, rng));
    if adv == 1 {
        out.push(pick(ADV, rng));
    }
    if np > 0 {
        noun_phrase(np, out, rng);
    }
    if pp > 0 {
        out.push(pick(PREP, rng));
        noun_phrase(pp - 1, out, rng);
    }
}
