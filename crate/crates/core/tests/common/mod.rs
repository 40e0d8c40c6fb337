#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use monostage_core::corpus::{Language, RawDocument, SourceKind};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn doc(id: &str, text: &str) -> RawDocument {
    RawDocument {
        id: id.into(),
        source_kind: SourceKind::Web,
        language: Language::En,
        title: None,
        text: text.into(),
        meta: BTreeMap::new(),
    }
}

/// `n` random lowercase words of 4 to 8 letters.
pub fn vocabulary(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(4..=8);
        let w: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn words(rng: &mut ChaCha8Rng, vocab: &[String], n: usize) -> Vec<String> {
    (0..n).map(|_| vocab.choose(rng).unwrap().clone()).collect()
}

/// Replace `k` distinct word positions with fresh vocabulary words.
pub fn substitute(rng: &mut ChaCha8Rng, base: &[String], vocab: &[String], k: usize) -> Vec<String> {
    let mut out = base.to_vec();
    let positions = rand::seq::index::sample(rng, base.len(), k.min(base.len()));
    for p in positions {
        out[p] = vocab.choose(rng).unwrap().clone();
    }
    out
}

/// Exact Jaccard similarity of two sets.
pub fn jaccard<T: std::hash::Hash + Eq>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Character `k`-grams as strings; independent of the library's hashing.
pub fn char_shingles(text: &str, k: usize) -> HashSet<String> {
    let chars: Vec<char> = text.chars().collect();
    chars.windows(k).map(|w| w.iter().collect()).collect()
}
