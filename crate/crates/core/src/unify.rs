//! Turning documents into single-language instruction/output pairs.
//!
//! Every passage becomes a question grounded in the passage plus an answer
//! that restates the passage's knowledge, both produced in the run's target
//! language by a [`Rewriter`]. Ready-made fine-tuning pairs in another
//! language are translated with the same client. Pairs then pass an ethics
//! blocklist and are tokenized with a loss mask that hides the instruction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::config::ConfigIssue;
use crate::corpus::{detect_language, Language, RawDocument};
use crate::rewriter::{RewriteError, Rewriter, TemplateId};

#[derive(Debug, thiserror::Error)]
pub enum UnifyError {
    #[error("pair {0} has an output that tokenizes to nothing")]
    EmptyOutput(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    BadRule { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Synthesized from corpus text.
    TransformedPretrain,
    /// Ingested as a ready-made fine-tuning pair.
    NativeSft,
}

impl Provenance {
    pub const ALL: [Provenance; 2] = [Provenance::TransformedPretrain, Provenance::NativeSft];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::TransformedPretrain => "transformed_pretrain",
            Provenance::NativeSft => "native_sft",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub pair_id: String,
    pub origin_doc_ids: Vec<String>,
    pub instruction: String,
    pub output: String,
    pub language: Language,
    pub genre: String,
    pub provenance: Provenance,
}

/// How documents are cut into passages and how many pairs each yields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSettings {
    pub max_chunk_chars: usize,
    pub pairs_per_chunk: usize,
}

impl Default for PairSettings {
    fn default() -> Self {
        PairSettings {
            max_chunk_chars: 1000,
            pairs_per_chunk: 1,
        }
    }
}

impl PairSettings {
    pub fn validate(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if self.max_chunk_chars < 16 {
            issues.push(ConfigIssue::new(format!("{prefix}.max_chunk_chars"), "must be at least 16"));
        }
        if self.pairs_per_chunk == 0 {
            issues.push(ConfigIssue::new(format!("{prefix}.pairs_per_chunk"), "must be at least 1"));
        }
        issues
    }
}

fn is_sentence_end(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？' | '\n')
}

/// Split after each sentence end (keeping trailing whitespace with the
/// sentence). The pieces concatenate back to `text`.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut ended = false;
    for (i, c) in text.char_indices() {
        if ended && !c.is_whitespace() && !is_sentence_end(c) {
            out.push(&text[start..i]);
            start = i;
            ended = false;
        }
        if is_sentence_end(c) {
            ended = true;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn paragraphs(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    while let Some(off) = text[start..].find("\n\n") {
        let mut end = start + off + 2;
        while text[end..].starts_with('\n') {
            end += 1;
        }
        out.push(&text[start..end]);
        start = end;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn char_split(s: &str, max_chars: usize) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut count = 0;
    for (i, _) in s.char_indices() {
        if count == max_chars {
            out.push(&s[start..i]);
            start = i;
            count = 0;
        }
        count += 1;
    }
    if start < s.len() {
        out.push(&s[start..]);
    }
    out
}

/// Cut `text` into chunks of at most `max_chars` characters, preferring
/// paragraph breaks, then sentence ends, then arbitrary character
/// positions. Concatenating the chunks reproduces `text` exactly.
pub fn chunk_text(text: &str, max_chars: usize) -> Vec<&str> {
    let max_chars = max_chars.max(1);
    let mut atoms: Vec<&str> = Vec::new();
    for para in paragraphs(text) {
        if para.chars().count() <= max_chars {
            atoms.push(para);
            continue;
        }
        for sent in sentences(para) {
            if sent.chars().count() <= max_chars {
                atoms.push(sent);
            } else {
                atoms.extend(char_split(sent, max_chars));
            }
        }
    }

    let mut chunks = Vec::new();
    let mut start = 0usize;
    let mut end = 0usize;
    let mut chars = 0usize;
    for atom in atoms {
        let n = atom.chars().count();
        if chars > 0 && chars + n > max_chars {
            chunks.push(&text[start..end]);
            start = end;
            chars = 0;
        }
        end += atom.len();
        chars += n;
    }
    if start < end {
        chunks.push(&text[start..end]);
    }
    chunks
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounters {
    pub pairs: u64,
    pub chunks: u64,
    pub dropped_empty: u64,
    pub dropped_failed: u64,
}

impl PairCounters {
    pub fn merge(&mut self, other: &PairCounters) {
        self.pairs += other.pairs;
        self.chunks += other.chunks;
        self.dropped_empty += other.dropped_empty;
        self.dropped_failed += other.dropped_failed;
    }
}

/// Instruction pairs synthesized from one document.
#[derive(Debug, Clone, Default)]
pub struct PairBatch {
    pub pairs: Vec<InstructionPair>,
    pub counters: PairCounters,
}

fn question_passage<'a>(doc: &'a RawDocument, chunk: &'a str, chunk_idx: usize, k: usize) -> &'a str {
    if chunk_idx == 0 && k == 0 {
        if let Some(title) = doc.title.as_deref() {
            return title;
        }
    }
    let sents: Vec<&str> = sentences(chunk).into_iter().map(str::trim).filter(|s| !s.is_empty()).collect();
    sents.get(k).or(sents.first()).copied().unwrap_or(chunk.trim())
}

/// Rewrite each chunk of `doc` into `settings.pairs_per_chunk` pairs in
/// `target`. The answer restates the whole chunk; the question is grounded
/// in the document title (first chunk) or one of the chunk's sentences.
pub fn make_instruction_pairs(
    doc: &RawDocument,
    rewriter: &Rewriter,
    target: Language,
    settings: &PairSettings,
) -> PairBatch {
    let mut batch = PairBatch::default();
    for (ci, chunk) in chunk_text(&doc.text, settings.max_chunk_chars).into_iter().enumerate() {
        let passage = chunk.trim();
        if passage.is_empty() {
            continue;
        }
        batch.counters.chunks += 1;
        let answer = match rewriter.run(TemplateId::GenAnswer, passage, target) {
            Ok(a) => a,
            Err(e) => {
                record_failure(&mut batch.counters, &doc.id, &e);
                continue;
            }
        };
        for k in 0..settings.pairs_per_chunk.max(1) {
            let q_source = question_passage(doc, passage, ci, k);
            let question = match rewriter.run(TemplateId::GenQuestion, q_source, target) {
                Ok(q) => q,
                Err(e) => {
                    record_failure(&mut batch.counters, &doc.id, &e);
                    continue;
                }
            };
            let pair_id = if k == 0 {
                format!("{}#c{ci}", doc.id)
            } else {
                format!("{}#c{ci}q{k}", doc.id)
            };
            batch.pairs.push(InstructionPair {
                pair_id,
                origin_doc_ids: vec![doc.id.clone()],
                instruction: question,
                output: answer.clone(),
                language: target,
                genre: doc.source_kind.to_string(),
                provenance: Provenance::TransformedPretrain,
            });
            batch.counters.pairs += 1;
        }
    }
    batch
}

fn record_failure(counters: &mut PairCounters, doc_id: &str, e: &RewriteError) {
    match e {
        RewriteError::EmptyRewrite | RewriteError::EmptyPassage => counters.dropped_empty += 1,
        other => {
            counters.dropped_failed += 1;
            tracing::warn!(doc_id, error = %other, "chunk skipped");
        }
    }
}

/// Pairs for many documents, rewritten in parallel, in document order.
pub fn make_pairs_for_all(
    docs: &[RawDocument],
    rewriter: &Rewriter,
    target: Language,
    settings: &PairSettings,
) -> PairBatch {
    let batches: Vec<PairBatch> = docs
        .par_iter()
        .map(|d| make_instruction_pairs(d, rewriter, target, settings))
        .collect();
    let mut all = PairBatch::default();
    for b in batches {
        all.counters.merge(&b.counters);
        all.pairs.extend(b.pairs);
    }
    all
}

/// Rewrite a pair into `target` unless it is already there. Ids and
/// provenance are preserved; on failure the pair must be dropped.
pub fn unify_language(
    pair: &InstructionPair,
    target: Language,
    rewriter: &Rewriter,
) -> Result<InstructionPair, RewriteError> {
    if pair.language == target {
        return Ok(pair.clone());
    }
    let instruction = rewriter.run(TemplateId::TranslateUnify, &pair.instruction, target)?;
    let output = rewriter.run(TemplateId::TranslateUnify, &pair.output, target)?;
    Ok(InstructionPair {
        instruction,
        output,
        language: target,
        ..pair.clone()
    })
}

/// Unify a batch in parallel, keeping order. Returns the unified pairs and
/// the ids of pairs dropped because the rewriter failed.
pub fn unify_all(pairs: &[InstructionPair], target: Language, rewriter: &Rewriter) -> (Vec<InstructionPair>, Vec<String>) {
    let results: Vec<_> = pairs.par_iter().map(|p| (p, unify_language(p, target, rewriter))).collect();
    let mut kept = Vec::with_capacity(pairs.len());
    let mut dropped = Vec::new();
    for (p, r) in results {
        match r {
            Ok(u) => kept.push(u),
            Err(e) => {
                tracing::warn!(pair_id = %p.pair_id, error = %e, "pair dropped during unification");
                dropped.push(p.pair_id.clone());
            }
        }
    }
    (kept, dropped)
}

#[derive(Deserialize)]
struct NativePairRecord {
    pair_id: String,
    instruction: String,
    output: String,
    #[serde(default)]
    origin_doc_ids: Vec<String>,
    #[serde(default)]
    language: Option<Language>,
    #[serde(default)]
    genre: Option<String>,
}

/// Load ready-made fine-tuning pairs. `language` is detected from the text
/// when absent; records missing required fields or with empty text are skipped.
pub fn load_native_pairs(path: &Path) -> Result<(Vec<InstructionPair>, u64), UnifyError> {
    let text = std::fs::read_to_string(path).map_err(|source| UnifyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let Ok(rec) = serde_json::from_str::<NativePairRecord>(line) else {
            skipped += 1;
            continue;
        };
        let instruction = crate::corpus::normalize_text(&rec.instruction);
        let output = crate::corpus::normalize_text(&rec.output);
        if instruction.is_empty() || output.is_empty() || rec.pair_id.is_empty() {
            skipped += 1;
            continue;
        }
        let language = match rec.language {
            Some(l) => l,
            None => detect_language(&format!("{instruction}\n{output}")).unwrap_or(Language::Other),
        };
        pairs.push(InstructionPair {
            pair_id: rec.pair_id,
            origin_doc_ids: rec.origin_doc_ids,
            instruction,
            output,
            language,
            genre: rec.genre.unwrap_or_else(|| "sft".into()),
            provenance: Provenance::NativeSft,
        });
    }
    Ok((pairs, skipped))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EthicsVerdict {
    pub pair_id: String,
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_rule: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EthicsRule {
    pub rule_id: String,
    pub pattern: Regex,
}

/// Ordered blocklist; the first matching rule names the rejection.
#[derive(Debug, Clone)]
pub struct EthicsGate {
    rules: Vec<EthicsRule>,
}

const DEFAULT_RULES: &[(&str, &str)] = &[
    // 18-character resident identity number
    ("pii_id", r"(?:^|[^0-9])[1-9][0-9]{16}[0-9Xx](?:$|[^0-9A-Za-z])"),
    ("pii_phone", r"(?:^|[^0-9])1[3-9][0-9]{9}(?:$|[^0-9])"),
    ("pii_ssn", r"(?:^|[^0-9])[0-9]{3}-[0-9]{2}-[0-9]{4}(?:$|[^0-9])"),
    ("self_harm", r"(?i)(?:how (?:to|can i) (?:kill|hurt|harm) (?:myself|yourself)|自杀方法|如何自杀|怎么自杀)"),
    (
        "dosage_without_context",
        r"(?i)(?:take|swallow|吞服|一次服用)\s*(?:all|全部|[0-9]{2,})\s*(?:of the )?(?:pills|tablets|片|粒)",
    ),
];

impl EthicsGate {
    pub fn new(rules: Vec<EthicsRule>) -> Self {
        EthicsGate { rules }
    }

    pub fn default_rules() -> Self {
        EthicsGate::new(
            DEFAULT_RULES
                .iter()
                .map(|&(id, pat)| EthicsRule {
                    rule_id: id.into(),
                    pattern: Regex::new(pat).expect("built-in rule compiles"),
                })
                .collect(),
        )
    }

    /// Parse `rule_id<TAB>pattern` lines; blank lines and `#` comments skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self, UnifyError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| UnifyError::BadRule {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let (id, pat) = line.split_once('\t').ok_or_else(|| bad("expected rule_id<TAB>pattern".into()))?;
            let pattern = Regex::new(pat).map_err(|e| bad(e.to_string()))?;
            rules.push(EthicsRule {
                rule_id: id.trim().to_string(),
                pattern,
            });
        }
        Ok(EthicsGate::new(rules))
    }

    pub fn load(path: &Path) -> Result<Self, UnifyError> {
        let text = std::fs::read_to_string(path).map_err(|source| UnifyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn rules(&self) -> &[EthicsRule] {
        &self.rules
    }

    pub fn check(&self, pair: &InstructionPair) -> EthicsVerdict {
        let matched = self
            .rules
            .iter()
            .find(|r| r.pattern.is_match(&pair.instruction) || r.pattern.is_match(&pair.output))
            .map(|r| r.rule_id.clone());
        EthicsVerdict {
            pair_id: pair.pair_id.clone(),
            kept: matched.is_none(),
            matched_rule: matched,
        }
    }
}

pub fn ethics_gate(pair: &InstructionPair, gate: &EthicsGate) -> EthicsVerdict {
    gate.check(pair)
}

/// Injective text-to-ids mapping with reserved control ids.
pub trait Tokenizer {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn vocab_size(&self) -> usize;
    fn sep_id(&self) -> u32;
    fn eos_id(&self) -> u32;
    /// Left padding for contexts that start before the sequence.
    fn pad_id(&self) -> u32;
}

/// UTF-8 bytes as ids 0..=255, then SEP, EOS and PAD.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const SEP: u32 = 256;
    pub const EOS: u32 = 257;
    pub const PAD: u32 = 258;
}

impl Tokenizer for ByteTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }
    fn vocab_size(&self) -> usize {
        259
    }
    fn sep_id(&self) -> u32 {
        Self::SEP
    }
    fn eos_id(&self) -> u32 {
        Self::EOS
    }
    fn pad_id(&self) -> u32 {
        Self::PAD
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub token_ids: Vec<u32>,
    /// `true` where the token is a prediction target.
    pub loss_mask: Vec<bool>,
    pub pair_id: String,
}

impl TokenizedExample {
    pub fn target_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    /// Keep at most the last `max_len` positions (the output end), as long
    /// as one target survives.
    pub fn truncate_front(&mut self, max_len: usize) {
        if self.token_ids.len() > max_len {
            let cut = self.token_ids.len() - max_len;
            self.token_ids.drain(..cut);
            self.loss_mask.drain(..cut);
        }
    }
}

/// `instruction ⊕ SEP ⊕ output ⊕ EOS`, masked off over instruction and SEP.
pub fn tokenize_with_mask<T: Tokenizer + ?Sized>(pair: &InstructionPair, tokenizer: &T) -> Result<TokenizedExample, UnifyError> {
    let instruction = tokenizer.encode(&pair.instruction);
    let output = tokenizer.encode(&pair.output);
    if output.is_empty() {
        return Err(UnifyError::EmptyOutput(pair.pair_id.clone()));
    }
    let mut token_ids = Vec::with_capacity(instruction.len() + output.len() + 2);
    let mut loss_mask = Vec::with_capacity(token_ids.capacity());
    token_ids.extend(&instruction);
    token_ids.push(tokenizer.sep_id());
    loss_mask.resize(token_ids.len(), false);
    token_ids.extend(&output);
    token_ids.push(tokenizer.eos_id());
    loss_mask.resize(token_ids.len(), true);
    Ok(TokenizedExample {
        token_ids,
        loss_mask,
        pair_id: pair.pair_id.clone(),
    })
}

/// Counts of pairs per language, for audits.
pub fn language_histogram(pairs: &[InstructionPair]) -> BTreeMap<Language, u64> {
    let mut h = BTreeMap::new();
    for p in pairs {
        *h.entry(p.language).or_default() += 1;
    }
    h
}
