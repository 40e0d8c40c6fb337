//! Seeded inputs shared by the benchmarks.

use std::collections::BTreeMap;

use monostage_core::unify::TokenizedExample;
use monostage_core::{Language, RawDocument, SourceKind};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "patient", "fever", "treatment", "the", "of", "blood", "pressure", "clinical", "and", "dose", "study", "report",
    "hospital", "therapy", "often", "year",
];

/// `n` English documents of about `words` words each, split into sentences.
pub fn documents(n: usize, words: usize, seed: u64) -> Vec<RawDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let w: Vec<&str> = (0..words).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
            let text = w.chunks(10).map(|c| format!("{}.", c.join(" "))).collect::<Vec<_>>().join(" ");
            RawDocument {
                id: format!("d{i:06}"),
                source_kind: SourceKind::Web,
                language: Language::En,
                title: None,
                text,
                meta: BTreeMap::new(),
            }
        })
        .collect()
}

/// Medical-term lexicon matching [`documents`].
pub fn lexicon() -> BTreeMap<Language, BTreeMap<String, f64>> {
    let terms = ["patient", "fever", "treatment", "clinical", "hospital", "therapy", "dose"];
    BTreeMap::from([(Language::En, terms.iter().map(|t| (t.to_string(), 1.0)).collect())])
}

/// Random pair-shaped examples: a masked-off prompt then `len - prompt` targets.
pub fn examples(n: usize, len: usize, vocab: u32, seed: u64) -> Vec<TokenizedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| TokenizedExample {
            token_ids: (0..len).map(|_| rng.random_range(0..vocab)).collect(),
            loss_mask: (0..len).map(|p| p >= len / 4).collect(),
            pair_id: format!("e{i}"),
        })
        .collect()
}
