//! One-stage dataset compilation: seeded mixing, sharding and a manifest
//! that can be re-verified against the shards on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ConfigIssue;
use crate::corpus::Language;
use crate::hashing::sha256_hex;
use crate::unify::{InstructionPair, Provenance};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CompileError {
    #[error("no pairs to compile")]
    EmptyInput,
    #[error("every mixing weight is zero")]
    ZeroWeights,
    #[error("pairs span several languages ({0:?}); unify them first")]
    MixedLanguages(Vec<Language>),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    BadManifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CompileError + '_ {
    move |source| CompileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixSpec {
    pub weights: BTreeMap<Provenance, f64>,
    pub seed: u64,
    pub shard_size: usize,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            weights: BTreeMap::from([(Provenance::TransformedPretrain, 1.0), (Provenance::NativeSft, 1.0)]),
            seed: 0,
            shard_size: 10_000,
        }
    }
}

impl MixSpec {
    pub fn weight(&self, class: Provenance) -> f64 {
        self.weights.get(&class).copied().unwrap_or(0.0)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("MixSpec serializes"))
    }

    pub fn validate(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        for (class, w) in &self.weights {
            if !(w.is_finite() && *w >= 0.0) {
                issues.push(ConfigIssue::new(format!("{prefix}.weights.{class}"), "must be finite and >= 0"));
            }
        }
        if self.weights.values().all(|&w| w <= 0.0) {
            issues.push(ConfigIssue::new(format!("{prefix}.weights"), "at least one weight must be positive"));
        }
        if self.shard_size == 0 {
            issues.push(ConfigIssue::new(format!("{prefix}.shard_size"), "must be at least 1"));
        }
        issues
    }
}

/// Result of [`interleave`].
#[derive(Debug, Clone)]
pub struct Interleaved<T> {
    pub items: Vec<T>,
    /// Classes with positive weight but no input.
    pub class_exhausted: Vec<Provenance>,
    /// Items left out because their class has zero weight.
    pub excluded: BTreeMap<Provenance, u64>,
}

/// Weighted sampling without replacement over classes.
///
/// Each class is first shuffled with the seeded generator (classes visited
/// in ascending order). Then, until every positive-weight class is empty,
/// one class is drawn with probability proportional to its weight among the
/// classes that still have items, and its next item is emitted.
pub fn interleave<T>(mut classes: BTreeMap<Provenance, Vec<T>>, spec: &MixSpec) -> Interleaved<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut class_exhausted = Vec::new();
    let mut excluded = BTreeMap::new();
    let mut queues: Vec<(Provenance, f64, std::vec::IntoIter<T>, usize)> = Vec::new();

    for class in Provenance::ALL {
        let items = classes.remove(&class).unwrap_or_default();
        let w = spec.weight(class);
        if w > 0.0 && items.is_empty() {
            class_exhausted.push(class);
        }
        if w <= 0.0 {
            if !items.is_empty() {
                excluded.insert(class, items.len() as u64);
            }
            continue;
        }
        let mut items = items;
        items.shuffle(&mut rng);
        let n = items.len();
        queues.push((class, w, items.into_iter(), n));
    }

    let total: usize = queues.iter().map(|q| q.3).sum();
    let mut out = Vec::with_capacity(total);
    loop {
        let weight_sum: f64 = queues.iter().filter(|q| q.3 > 0).map(|q| q.1).sum();
        if weight_sum <= 0.0 {
            break;
        }
        let mut r = rng.random::<f64>() * weight_sum;
        let mut chosen = None;
        for (idx, q) in queues.iter().enumerate().filter(|(_, q)| q.3 > 0) {
            chosen = Some(idx);
            if r < q.1 {
                break;
            }
            r -= q.1;
        }
        let q = &mut queues[chosen.expect("a non-empty class exists")];
        out.push(q.2.next().expect("remaining count tracks the iterator"));
        q.3 -= 1;
    }
    Interleaved {
        items: out,
        class_exhausted,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub count: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestCell {
    pub provenance: Provenance,
    pub genre: String,
    pub language: Language,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub shards: Vec<ShardEntry>,
    pub cells: Vec<ManifestCell>,
    pub seed: u64,
    pub config_hash: String,
    pub total: u64,
    #[serde(default)]
    pub class_exhausted: Vec<Provenance>,
    #[serde(default)]
    pub excluded: BTreeMap<Provenance, u64>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, CompileError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&bytes).map_err(|source| CompileError::BadManifest {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }

    pub fn shard_total(&self) -> u64 {
        self.shards.iter().map(|s| s.count).sum()
    }

    pub fn cell_total(&self) -> u64 {
        self.cells.iter().map(|c| c.count).sum()
    }

    /// Totals agree with each other: `total = Σ shards = Σ cells`.
    pub fn is_consistent(&self) -> bool {
        self.total == self.shard_total() && self.total == self.cell_total()
    }
}

fn cells_of<'a, I: IntoIterator<Item = &'a InstructionPair>>(pairs: I) -> Vec<ManifestCell> {
    let mut counts: BTreeMap<(Provenance, String, Language), u64> = BTreeMap::new();
    for p in pairs {
        *counts.entry((p.provenance, p.genre.clone(), p.language)).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((provenance, genre, language), count)| ManifestCell {
            provenance,
            genre,
            language,
            count,
        })
        .collect()
}

pub fn shard_name(i: usize) -> String {
    format!("shard-{i:05}.jsonl")
}

/// Mix, shard and write `pairs` under `out_dir`, returning the manifest
/// (also written to `out_dir/manifest.json`).
pub fn compile(pairs: Vec<InstructionPair>, spec: &MixSpec, out_dir: &Path) -> Result<DatasetManifest, CompileError> {
    if pairs.is_empty() {
        return Err(CompileError::EmptyInput);
    }
    if spec.weights.values().all(|&w| w <= 0.0) {
        return Err(CompileError::ZeroWeights);
    }
    let mut langs: Vec<Language> = pairs.iter().map(|p| p.language).collect();
    langs.sort();
    langs.dedup();
    if langs.len() > 1 {
        return Err(CompileError::MixedLanguages(langs));
    }

    let mut classes: BTreeMap<Provenance, Vec<InstructionPair>> = BTreeMap::new();
    for p in pairs {
        classes.entry(p.provenance).or_default().push(p);
    }
    let mixed = interleave(classes, spec);
    if mixed.items.is_empty() {
        return Err(CompileError::EmptyInput);
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let shard_size = spec.shard_size.max(1);
    let shards: Vec<ShardEntry> = mixed
        .items
        .par_chunks(shard_size)
        .enumerate()
        .map(|(i, chunk)| {
            let file = shard_name(i);
            let bytes = crate::jsonl::to_bytes(chunk);
            let path = out_dir.join(&file);
            fs::write(&path, &bytes).map_err(io_err(&path))?;
            Ok(ShardEntry {
                file,
                count: chunk.len() as u64,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<Result<_, CompileError>>()?;

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        total: mixed.items.len() as u64,
        cells: cells_of(&mixed.items),
        shards,
        seed: spec.seed,
        config_hash: spec.config_hash(),
        class_exhausted: mixed.class_exhausted,
        excluded: mixed.excluded,
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(io_err(&path))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Re-read every shard under `dir` and check counts, content hashes, cell
/// counts and the config hash of `spec` against `manifest`.
pub fn verify_manifest(manifest: &DatasetManifest, dir: &Path, spec: &MixSpec) -> VerifyReport {
    let mut problems = Vec::new();
    if manifest.config_hash != spec.config_hash() {
        problems.push(format!(
            "config hash mismatch: manifest {} vs config {}",
            manifest.config_hash,
            spec.config_hash()
        ));
    }
    if !manifest.is_consistent() {
        problems.push(format!(
            "manifest totals disagree: total {} shards {} cells {}",
            manifest.total,
            manifest.shard_total(),
            manifest.cell_total()
        ));
    }
    let mut all_pairs = Vec::new();
    for shard in &manifest.shards {
        let path = dir.join(&shard.file);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                problems.push(format!("{}: missing or unreadable ({e})", shard.file));
                continue;
            }
        };
        let lines = bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count() as u64;
        if lines != shard.count {
            problems.push(format!("{}: count mismatch, manifest {} vs file {}", shard.file, shard.count, lines));
        }
        if sha256_hex(&bytes) != shard.sha256 {
            problems.push(format!("{}: content hash mismatch", shard.file));
        }
        for line in bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            match serde_json::from_slice::<InstructionPair>(line) {
                Ok(p) => all_pairs.push(p),
                Err(e) => {
                    problems.push(format!("{}: unparseable record ({e})", shard.file));
                    break;
                }
            }
        }
    }
    if problems.is_empty() && cells_of(&all_pairs) != manifest.cells {
        problems.push("cell counts do not match shard contents".into());
    }
    VerifyReport { problems }
}

/// Read back every pair of a compiled dataset, in shard order.
pub fn read_shards(manifest: &DatasetManifest, dir: &Path) -> Result<Vec<InstructionPair>, CompileError> {
    let mut out = Vec::with_capacity(manifest.total as usize);
    for shard in &manifest.shards {
        let path = dir.join(&shard.file);
        out.extend(crate::jsonl::read_all::<InstructionPair>(&path).map_err(io_err(&path))?);
    }
    Ok(out)
}
