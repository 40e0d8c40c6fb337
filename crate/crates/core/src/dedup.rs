//! Exact and near-duplicate removal.
//!
//! Near duplicates are found with MinHash signatures over character
//! shingles (which works for unsegmented Chinese as well as English),
//! LSH banding for candidate generation, and a signature-agreement check
//! before two documents are joined into a cluster.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ConfigIssue;
use crate::corpus::RawDocument;
use crate::hashing::{fnv1a64, sha256, splitmix64};

const MERSENNE_61: u64 = (1 << 61) - 1;
const PERM_SEED: u64 = 0x6d69_6e68_6173_6821;
pub const MIN_PERMS: usize = 16;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DedupError {
    #[error("text has {chars} chars, shorter than shingle size {shingle_size}")]
    TooShort { chars: usize, shingle_size: usize },
    #[error("num_perms must be at least {MIN_PERMS}, got {0}")]
    TooFewPerms(usize),
    #[error("bands x rows = {bands} x {rows} does not equal num_perms {num_perms}")]
    BandMismatch { bands: usize, rows: usize, num_perms: usize },
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("signature for {0} has the wrong length")]
    LengthMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupParams {
    pub num_perms: usize,
    pub shingle_size: usize,
    pub bands: usize,
    pub rows: usize,
    pub threshold: f64,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            num_perms: 128,
            shingle_size: 5,
            bands: 32,
            rows: 4,
            threshold: 0.8,
        }
    }
}

impl DedupParams {
    pub fn validate(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if self.num_perms < MIN_PERMS {
            issues.push(ConfigIssue::new(format!("{prefix}.num_perms"), format!("must be at least {MIN_PERMS}")));
        }
        if self.bands * self.rows != self.num_perms {
            issues.push(ConfigIssue::new(
                format!("{prefix}.bands"),
                format!("bands x rows ({} x {}) must equal num_perms ({})", self.bands, self.rows, self.num_perms),
            ));
        }
        if self.shingle_size == 0 {
            issues.push(ConfigIssue::new(format!("{prefix}.shingle_size"), "must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            issues.push(ConfigIssue::new(format!("{prefix}.threshold"), "must lie in (0, 1)"));
        }
        issues
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub doc_id: String,
    pub values: Vec<u64>,
}

impl MinHashSignature {
    /// Fraction of positions where the two signatures agree; an unbiased
    /// estimate of the Jaccard similarity of the underlying shingle sets.
    pub fn agreement(&self, other: &MinHashSignature) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        let same = self.values.iter().zip(&other.values).filter(|(a, b)| a == b).count();
        same as f64 / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateCluster {
    /// Lexicographically smallest member id.
    pub representative: String,
    /// Sorted member ids, representative included.
    pub members: Vec<String>,
}

/// Character shingles of `text`, hashed to 64 bits.
pub fn shingle_hashes(text: &str, shingle_size: usize) -> HashSet<u64> {
    let chars: Vec<char> = text.chars().collect();
    let mut buf = String::new();
    chars
        .windows(shingle_size)
        .map(|w| {
            buf.clear();
            buf.extend(w);
            fnv1a64(buf.as_bytes())
        })
        .collect()
}

#[inline]
fn mod_mersenne(x: u128) -> u64 {
    let p = MERSENNE_61 as u128;
    let folded = (x & p) + (x >> 61);
    let folded = (folded & p) + (folded >> 61);
    let r = folded as u64;
    if r >= MERSENNE_61 {
        r - MERSENNE_61
    } else {
        r
    }
}

/// A fixed family of `(a·x + b) mod (2^61 − 1)` hash permutations.
#[derive(Debug, Clone)]
pub struct MinHasher {
    coeffs: Vec<(u64, u64)>,
    shingle_size: usize,
}

impl MinHasher {
    pub fn new(num_perms: usize, shingle_size: usize) -> Result<Self, DedupError> {
        if num_perms < MIN_PERMS {
            return Err(DedupError::TooFewPerms(num_perms));
        }
        let mut state = PERM_SEED;
        let coeffs = (0..num_perms)
            .map(|_| {
                let a = splitmix64(&mut state) % (MERSENNE_61 - 1) + 1;
                let b = splitmix64(&mut state) % MERSENNE_61;
                (a, b)
            })
            .collect();
        Ok(MinHasher { coeffs, shingle_size })
    }

    pub fn num_perms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn signature(&self, doc_id: &str, text: &str) -> Result<MinHashSignature, DedupError> {
        let chars = text.chars().count();
        if chars < self.shingle_size || self.shingle_size == 0 {
            return Err(DedupError::TooShort {
                chars,
                shingle_size: self.shingle_size,
            });
        }
        let shingles: Vec<u64> = shingle_hashes(text, self.shingle_size)
            .into_iter()
            .map(|h| mod_mersenne(h as u128))
            .collect();
        let values = self
            .coeffs
            .iter()
            .map(|&(a, b)| {
                shingles
                    .iter()
                    .map(|&x| mod_mersenne(a as u128 * x as u128 + b as u128))
                    .min()
                    .expect("at least one shingle")
            })
            .collect();
        Ok(MinHashSignature {
            doc_id: doc_id.to_string(),
            values,
        })
    }
}

pub fn minhash_signature(
    doc_id: &str,
    text: &str,
    num_perms: usize,
    shingle_size: usize,
) -> Result<MinHashSignature, DedupError> {
    MinHasher::new(num_perms, shingle_size)?.signature(doc_id, text)
}

/// Disjoint-set forest over indices.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }

    /// Components with at least `min_size` members, as sorted index lists.
    pub fn groups(&mut self, min_size: usize) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        by_root.into_values().filter(|g| g.len() >= min_size).collect()
    }
}

/// Candidate pairs `(i, j)`, `i < j`, sharing at least one LSH band bucket.
pub fn lsh_candidates(signatures: &[MinHashSignature], bands: usize, rows: usize) -> Vec<(usize, usize)> {
    let mut pairs = HashSet::new();
    for band in 0..bands {
        let mut buckets: HashMap<&[u64], Vec<usize>> = HashMap::new();
        for (i, sig) in signatures.iter().enumerate() {
            buckets.entry(&sig.values[band * rows..(band + 1) * rows]).or_default().push(i);
        }
        for members in buckets.values().filter(|m| m.len() > 1) {
            for (x, &i) in members.iter().enumerate() {
                for &j in &members[x + 1..] {
                    pairs.insert((i.min(j), i.max(j)));
                }
            }
        }
    }
    let mut pairs: Vec<_> = pairs.into_iter().collect();
    pairs.sort_unstable();
    pairs
}

/// Cluster documents whose signatures collide in some LSH band and agree on
/// at least `threshold` of their positions.
pub fn near_duplicates(
    signatures: &[MinHashSignature],
    threshold: f64,
    bands: usize,
    rows: usize,
) -> Result<Vec<DuplicateCluster>, DedupError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(DedupError::BadThreshold(threshold));
    }
    let Some(first) = signatures.first() else {
        return Ok(Vec::new());
    };
    let num_perms = first.values.len();
    if bands * rows != num_perms {
        return Err(DedupError::BandMismatch { bands, rows, num_perms });
    }
    if let Some(bad) = signatures.iter().find(|s| s.values.len() != num_perms) {
        return Err(DedupError::LengthMismatch(bad.doc_id.clone()));
    }

    let confirmed: Vec<(usize, usize)> = lsh_candidates(signatures, bands, rows)
        .into_par_iter()
        .filter(|&(i, j)| signatures[i].agreement(&signatures[j]) >= threshold)
        .collect();

    let mut uf = UnionFind::new(signatures.len());
    for (i, j) in confirmed {
        uf.union(i, j);
    }
    let mut clusters: Vec<DuplicateCluster> = uf
        .groups(2)
        .into_iter()
        .map(|g| {
            let mut members: Vec<String> = g.into_iter().map(|i| signatures[i].doc_id.clone()).collect();
            members.sort();
            DuplicateCluster {
                representative: members[0].clone(),
                members,
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.representative.cmp(&b.representative));
    Ok(clusters)
}

/// Keep the first occurrence of each distinct text; returns the ids dropped.
pub fn exact_dedup(docs: Vec<RawDocument>) -> (Vec<RawDocument>, Vec<String>) {
    let mut seen = HashSet::new();
    let mut removed = Vec::new();
    let kept = docs
        .into_iter()
        .filter(|d| {
            if seen.insert(sha256(d.text.as_bytes())) {
                true
            } else {
                removed.push(d.id.clone());
                false
            }
        })
        .collect();
    (kept, removed)
}

#[derive(Debug, Clone, Default)]
pub struct DedupOutcome {
    pub kept: Vec<RawDocument>,
    pub exact_removed: Vec<String>,
    pub near_removed: Vec<String>,
    pub clusters: Vec<DuplicateCluster>,
}

impl DedupOutcome {
    pub fn removed_ids(&self) -> impl Iterator<Item = &str> {
        self.exact_removed.iter().chain(&self.near_removed).map(String::as_str)
    }
}

/// Exact pass followed by the near-duplicate pass. Documents too short to
/// shingle only take part in the exact pass. Kept documents stay in input order.
pub fn dedup_documents(docs: Vec<RawDocument>, params: &DedupParams) -> Result<DedupOutcome, DedupError> {
    let (docs, exact_removed) = exact_dedup(docs);
    let hasher = MinHasher::new(params.num_perms, params.shingle_size)?;
    let signatures: Vec<MinHashSignature> = docs
        .par_iter()
        .filter_map(|d| hasher.signature(&d.id, &d.text).ok())
        .collect();
    let clusters = near_duplicates(&signatures, params.threshold, params.bands, params.rows)?;

    let drop: HashSet<&str> = clusters
        .iter()
        .flat_map(|c| c.members[1..].iter().map(String::as_str))
        .collect();
    let mut near_removed = Vec::new();
    let mut kept = Vec::with_capacity(docs.len());
    for d in docs {
        if drop.contains(d.id.as_str()) {
            near_removed.push(d.id);
        } else {
            kept.push(d);
        }
    }
    Ok(DedupOutcome {
        kept,
        exact_removed,
        near_removed,
        clusters,
    })
}
