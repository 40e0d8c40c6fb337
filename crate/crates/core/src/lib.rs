//! Building blocks for one-stage domain adaptation of language models.
//!
//! The pipeline takes heterogeneous raw corpora (web pages, books,
//! encyclopedia entries, papers; several languages), filters and
//! deduplicates them, rewrites every surviving passage into an
//! instruction/output pair in a single target language, and compiles those
//! pairs together with ready-made fine-tuning pairs into one mixed,
//! loss-masked training set. A small next-token model ([`trainer`]) is
//! included to exercise the masked loss and to compare a single mixed
//! training phase against the classic continued-pretraining-then-SFT
//! schedule.
//!
//! Module map:
//!
//! - [`corpus`]: raw document types, ingestion, normalization, language id
//! - [`quality`]: heuristic filter cascade and rank-based selection
//! - [`dedup`]: exact and MinHash/LSH near-duplicate removal
//! - [`rewriter`]: pluggable rewriting backends with disk cache and retries
//! - [`unify`]: instruction pairs, language unification, ethics gate, masking
//! - [`compiler`]: seeded mixing, sharding and manifest verification
//! - [`trainer`]: toy masked-loss language model and training loops
//! - [`eval`]: multiple-choice scoring and pairwise verdict aggregation
//! - [`config`]: the run configuration file

pub mod compiler;
pub mod config;
pub mod corpus;
pub mod dedup;
pub mod eval;
pub mod hashing;
pub mod jsonl;
pub mod quality;
pub mod rewriter;
pub mod trainer;
pub mod unify;

pub use compiler::{DatasetManifest, MixSpec};
pub use config::RunConfig;
pub use corpus::{CorpusStats, Language, RawDocument, SourceKind};
pub use dedup::{DuplicateCluster, MinHashSignature};
pub use eval::{BenchmarkReport, ExamItem, JudgeRecord, Verdict};
pub use quality::{FilterConfig, QualityVerdict, SelectionReport};
pub use rewriter::{RewriteRequest, Rewriter, TemplateId};
pub use trainer::{LossTrace, ToyModel, TrainConfig};
pub use unify::{InstructionPair, Provenance, TokenizedExample};
