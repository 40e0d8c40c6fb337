//! Stage orchestration: one output directory per stage under the workdir,
//! gated by a content-hash stamp.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use monostage_core::compiler::{compile, read_shards, verify_manifest, VerifyReport, MANIFEST_FILE};
use monostage_core::config::ConfigError;
use monostage_core::corpus::{ingest, IngestOptions};
use monostage_core::dedup::dedup_documents;
use monostage_core::eval::{aggregate_pairwise, format_mcq_prompt, score_benchmark, ModelOutput};
use monostage_core::hashing::sha256_fields;
use monostage_core::jsonl;
use monostage_core::quality::select_corpus;
use monostage_core::rewriter::{Backend, HttpBackend, MockBackend};
use monostage_core::trainer::{boundary_jump, train, TrainData, TrainMode};
use monostage_core::unify::{
    language_histogram, load_native_pairs, make_pairs_for_all, tokenize_with_mask, unify_all, ByteTokenizer, EthicsGate,
    Tokenizer,
};
use monostage_core::{
    CorpusStats, DatasetManifest, ExamItem, InstructionPair, JudgeRecord, Provenance, RawDocument, Rewriter, RunConfig,
    TokenizedExample, ToyModel,
};
use serde_json::json;

const STAMP: &str = ".stamp";
const INCOMPLETE: &str = ".incomplete";
const DOCUMENTS: &str = "documents.jsonl";
const PAIRS: &str = "pairs.jsonl";
const CHECKPOINT: &str = "model.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Filter,
    Dedup,
    Unify,
    Compile,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Filter,
        Stage::Dedup,
        Stage::Unify,
        Stage::Compile,
        Stage::Train,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Filter => "filter",
            Stage::Dedup => "dedup",
            Stage::Unify => "unify",
            Stage::Compile => "compile",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    fn upstream(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|&s| s == self)?;
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}` (expected one of ingest, filter, dedup, unify, compile, train, eval)"))
    }
}

#[derive(Debug)]
pub enum StageError {
    Config(String),
    Failed { stage: Stage, message: String },
    Verify(usize),
    Other(String),
}

impl StageError {
    pub fn config(msg: impl Into<String>) -> Self {
        StageError::Config(msg.into())
    }

    pub fn verify(problems: usize) -> Self {
        StageError::Verify(problems)
    }

    pub fn other(e: impl fmt::Display) -> Self {
        StageError::Other(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            StageError::Config(_) => 2,
            StageError::Failed { .. } => 3,
            StageError::Verify(_) => 4,
            StageError::Other(_) => 1,
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageError::Config(m) => write!(f, "{m}"),
            StageError::Failed { stage, message } => write!(f, "stage {stage} failed: {message}"),
            StageError::Verify(n) => write!(f, "verification found {n} problem(s)"),
            StageError::Other(m) => write!(f, "{m}"),
        }
    }
}

type StageResult<T> = Result<T, String>;

fn s<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

fn hash_path(path: &Path) -> StageResult<Vec<u8>> {
    let mut files = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| format!("{}: {e}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut fields = Vec::new();
    for f in files.drain(..) {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let bytes = fs::read(&f).map_err(|e| format!("{}: {e}", f.display()))?;
        fields.push(name.into_bytes());
        fields.push(bytes);
    }
    Ok(sha256_fields(fields.iter().map(Vec::as_slice)).to_vec())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> StageResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(s)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a str>) -> StageResult<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?);
    for l in lines {
        writeln!(w, "{l}").map_err(s)?;
    }
    w.flush().map_err(s)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> StageResult<Vec<T>> {
    jsonl::read_all(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_jsonl<'a, T: serde::Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> StageResult<usize> {
    jsonl::write_all(path, records).map_err(|e| format!("{}: {e}", path.display()))
}

pub struct Pipeline {
    cfg: RunConfig,
    mock: bool,
}

impl Pipeline {
    pub fn open(config: &Path, seed: Option<u64>, mock: bool) -> Result<Self, StageError> {
        let mut cfg = RunConfig::load(config).map_err(|e| match e {
            ConfigError::Invalid(_) | ConfigError::Parse { .. } | ConfigError::Io { .. } => StageError::Config(e.to_string()),
        })?;
        if let Some(seed) = seed {
            cfg.override_seed(seed);
        }
        Ok(Pipeline { cfg, mock })
    }

    fn dir(&self, stage: Stage) -> PathBuf {
        self.cfg.paths.workdir.join(stage.name())
    }

    fn completed_stamp(&self, stage: Stage) -> Option<String> {
        let dir = self.dir(stage);
        if dir.join(INCOMPLETE).exists() {
            return None;
        }
        fs::read_to_string(dir.join(STAMP)).ok()
    }

    fn fingerprint(&self, stage: Stage) -> StageResult<String> {
        let cfg = &self.cfg;
        let mut fields: Vec<Vec<u8>> = vec![stage.name().into(), env!("CARGO_PKG_VERSION").into()];
        if let Some(up) = stage.upstream() {
            let stamp = self
                .completed_stamp(up)
                .ok_or_else(|| format!("upstream stage {up} has not completed; run it first"))?;
            fields.push(stamp.into_bytes());
        }
        let settings = match stage {
            Stage::Ingest => {
                for input in &cfg.inputs {
                    fields.push(hash_path(&input.path)?);
                }
                json!({ "inputs": cfg.inputs.iter().map(|i| (i.source_kind, i.language)).collect::<Vec<_>>() })
            }
            Stage::Filter => json!(cfg.filter_config().map_err(s)?),
            Stage::Dedup => json!(cfg.dedup),
            Stage::Unify => {
                for p in &cfg.sft.paths {
                    fields.push(hash_path(p)?);
                }
                if let Some(p) = &cfg.unify.ethics_rules {
                    fields.push(hash_path(p)?);
                }
                json!({
                    "target": cfg.target_language,
                    "pairs": cfg.unify.pairs,
                    "mock": self.mock,
                    "model": cfg.rewriter.model_id,
                    "endpoint": if self.mock { None } else { Some(&cfg.rewriter.endpoint) },
                })
            }
            Stage::Compile => json!(cfg.mix),
            Stage::Train => json!(cfg.train),
            Stage::Eval => {
                for p in [&cfg.eval.exam, &cfg.eval.outputs, &cfg.eval.judgments].into_iter().flatten() {
                    fields.push(hash_path(p)?);
                }
                json!(cfg.eval)
            }
        };
        fields.push(serde_json::to_vec(&settings).map_err(s)?);
        Ok(hex_of(&sha256_fields(fields.iter().map(Vec::as_slice))))
    }

    /// Run one stage unless its stamp matches the current inputs and config.
    pub fn run_stage(&self, stage: Stage) -> Result<String, StageError> {
        let fail = |message: String| StageError::Failed { stage, message };
        let fp = self.fingerprint(stage).map_err(fail)?;
        if self.completed_stamp(stage).as_deref() == Some(fp.as_str()) {
            tracing::info!(stage = stage.name(), "up to date");
            return Ok("up to date".into());
        }
        let dir = self.dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| fail(format!("cannot clear {}: {e}", dir.display())))?;
        }
        fs::create_dir_all(&dir).map_err(|e| fail(format!("cannot create {}: {e}", dir.display())))?;
        fs::write(dir.join(INCOMPLETE), b"").map_err(|e| fail(e.to_string()))?;
        tracing::info!(stage = stage.name(), fingerprint = %fp, "stage started");

        let summary = match stage {
            Stage::Ingest => self.ingest(&dir),
            Stage::Filter => self.filter(&dir),
            Stage::Dedup => self.dedup(&dir),
            Stage::Unify => self.unify(&dir),
            Stage::Compile => self.compile(&dir),
            Stage::Train => self.train(&dir),
            Stage::Eval => self.eval(&dir),
        }
        .map_err(fail)?;

        fs::write(dir.join(STAMP), &fp).map_err(|e| fail(e.to_string()))?;
        fs::remove_file(dir.join(INCOMPLETE)).map_err(|e| fail(e.to_string()))?;
        tracing::info!(stage = stage.name(), summary = %summary, "stage finished");
        Ok(summary)
    }

    pub fn verify(&self, dir: Option<&Path>) -> Result<VerifyReport, StageError> {
        let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| self.dir(Stage::Compile));
        let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE)).map_err(StageError::other)?;
        Ok(verify_manifest(&manifest, &dir, &self.cfg.mix))
    }

    fn ingest(&self, dir: &Path) -> StageResult<String> {
        let out_path = dir.join(DOCUMENTS);
        let mut w = BufWriter::new(fs::File::create(&out_path).map_err(s)?);
        let mut stats = CorpusStats::default();
        let mut seen = HashSet::new();
        let mut per_input = Vec::new();
        for input in &self.cfg.inputs {
            let mut stream = ingest(&input.path, input.source_kind, input.language, IngestOptions::default())
                .map_err(s)?
                .with_seen_ids(seen);
            for doc in stream.by_ref() {
                stats.record(&doc);
                serde_json::to_writer(&mut w, &doc).map_err(s)?;
                w.write_all(b"\n").map_err(s)?;
            }
            if let Some(e) = stream.take_error() {
                return Err(e.to_string());
            }
            let name = input.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            per_input.push(json!({ "input": name, "counters": stream.counters() }));
            seen = stream.into_seen_ids();
        }
        w.flush().map_err(s)?;
        write_json(&dir.join("stats.json"), &stats)?;
        write_json(&dir.join("counters.json"), &per_input)?;
        Ok(format!(
            "{} documents from {} input(s) in {} cell(s)",
            stats.total(),
            self.cfg.inputs.len(),
            stats.nonzero_cells()
        ))
    }

    fn filter(&self, dir: &Path) -> StageResult<String> {
        let docs: Vec<RawDocument> = read_jsonl(&self.dir(Stage::Ingest).join(DOCUMENTS))?;
        let cfg = self.cfg.filter_config().map_err(s)?;
        let sel = select_corpus(docs, &cfg);
        write_jsonl(&dir.join(DOCUMENTS), &sel.kept)?;
        write_jsonl(&dir.join("verdicts.jsonl"), &sel.verdicts)?;
        write_json(&dir.join("selection_report.json"), &sel.report)?;
        let r = &sel.report;
        if r.under_quota {
            tracing::warn!(survivors = r.survivor_count, quota = ?r.quota, "fewer survivors than the target quota");
        }
        Ok(format!(
            "kept {} of {} (rate {:.4}){}",
            r.kept_count,
            r.input_count,
            r.selection_rate,
            if r.under_quota { ", under quota" } else { "" }
        ))
    }

    fn dedup(&self, dir: &Path) -> StageResult<String> {
        let docs: Vec<RawDocument> = read_jsonl(&self.dir(Stage::Filter).join(DOCUMENTS))?;
        let n = docs.len();
        let out = dedup_documents(docs, &self.cfg.dedup).map_err(s)?;
        write_jsonl(&dir.join(DOCUMENTS), &out.kept)?;
        let removed: Vec<String> = out
            .exact_removed
            .iter()
            .map(|id| format!("{id}\texact"))
            .chain(out.near_removed.iter().map(|id| format!("{id}\tnear")))
            .collect();
        write_lines(&dir.join("removed_ids.txt"), removed.iter().map(String::as_str))?;
        write_json(&dir.join("clusters.json"), &out.clusters)?;
        Ok(format!(
            "kept {} of {} ({} exact, {} near duplicates in {} clusters)",
            out.kept.len(),
            n,
            out.exact_removed.len(),
            out.near_removed.len(),
            out.clusters.len()
        ))
    }

    fn rewriter(&self) -> Rewriter {
        let settings = &self.cfg.rewriter;
        let mut settings = settings.clone();
        if settings.cache_dir.is_none() {
            settings.cache_dir = Some(self.cfg.paths.workdir.join("cache").join("rewriter"));
        }
        let backend: Arc<dyn Backend> = if self.mock {
            settings.model_id = "mock".into();
            Arc::new(MockBackend)
        } else {
            Arc::new(HttpBackend::from_env(settings.endpoint.clone(), Duration::from_secs(settings.timeout_secs)))
        };
        Rewriter::new(backend, &settings)
    }

    fn unify(&self, dir: &Path) -> StageResult<String> {
        let target = self.cfg.target_language;
        let docs: Vec<RawDocument> = read_jsonl(&self.dir(Stage::Dedup).join(DOCUMENTS))?;
        let rewriter = self.rewriter();
        let batch = make_pairs_for_all(&docs, &rewriter, target, &self.cfg.unify.pairs);

        let mut native = Vec::new();
        let mut native_skipped = 0;
        for p in &self.cfg.sft.paths {
            let (pairs, skipped) = load_native_pairs(p).map_err(s)?;
            native.extend(pairs);
            native_skipped += skipped;
        }
        let native_loaded = native.len();
        let (unified, dropped) = unify_all(&native, target, &rewriter);

        let gate = match &self.cfg.unify.ethics_rules {
            Some(p) => EthicsGate::load(p).map_err(s)?,
            None => EthicsGate::default_rules(),
        };
        let mut kept: Vec<InstructionPair> = Vec::new();
        let mut rejected = Vec::new();
        for pair in batch.pairs.into_iter().chain(unified) {
            let v = gate.check(&pair);
            if v.kept {
                kept.push(pair);
            } else {
                rejected.push(v);
            }
        }
        if kept.is_empty() {
            return Err("no instruction pairs survived unification".into());
        }
        if kept.iter().any(|p| p.language != target) {
            return Err("unified pairs are not all in the target language".into());
        }

        write_jsonl(&dir.join(PAIRS), &kept)?;
        write_jsonl(&dir.join("ethics_rejected.jsonl"), &rejected)?;
        write_lines(&dir.join("dropped_ids.txt"), dropped.iter().map(String::as_str))?;
        let stats = rewriter.stats();
        let transformed = kept.iter().filter(|p| p.provenance == Provenance::TransformedPretrain).count();
        write_json(
            &dir.join("summary.json"),
            &json!({
                "target_language": target,
                "transformed": batch.counters,
                "native_loaded": native_loaded,
                "native_skipped": native_skipped,
                "native_dropped": dropped.len(),
                "ethics_rejected": rejected.len(),
                "kept": kept.len(),
                "languages": language_histogram(&kept),
            }),
        )?;
        tracing::info!(
            cache_hits = stats.cache_hits,
            backend_attempts = stats.backend_attempts,
            failures = stats.failures,
            "rewriter usage"
        );
        Ok(format!(
            "{} pairs in {target} ({} transformed, {} native; {} rejected by ethics gate, {} dropped)",
            kept.len(),
            transformed,
            kept.len() - transformed,
            rejected.len(),
            dropped.len() as u64 + batch.counters.dropped_empty + batch.counters.dropped_failed
        ))
    }

    fn compile(&self, dir: &Path) -> StageResult<String> {
        let pairs: Vec<InstructionPair> = read_jsonl(&self.dir(Stage::Unify).join(PAIRS))?;
        let manifest = compile(pairs, &self.cfg.mix, dir).map_err(s)?;
        Ok(format!(
            "{} pairs in {} shard(s), config hash {}",
            manifest.total,
            manifest.shards.len(),
            &manifest.config_hash[..12]
        ))
    }

    fn train(&self, dir: &Path) -> StageResult<String> {
        let compiled = self.dir(Stage::Compile);
        let manifest = DatasetManifest::load(&compiled.join(MANIFEST_FILE)).map_err(s)?;
        let pairs = read_shards(&manifest, &compiled).map_err(s)?;
        let tok = ByteTokenizer;
        let tokenize = |p: &InstructionPair| tokenize_with_mask(p, &tok).map_err(s);
        let cfg = &self.cfg.train;
        let data = match cfg.mode {
            TrainMode::OneStage => TrainData::OneStage(pairs.iter().map(tokenize).collect::<StageResult<_>>()?),
            TrainMode::TwoStage => {
                let docs: Vec<RawDocument> = read_jsonl(&self.dir(Stage::Dedup).join(DOCUMENTS))?;
                let pretrain = docs
                    .iter()
                    .map(|d| {
                        let mut token_ids = tok.encode(&d.text);
                        token_ids.push(tok.eos_id());
                        TokenizedExample {
                            loss_mask: vec![true; token_ids.len()],
                            token_ids,
                            pair_id: d.id.clone(),
                        }
                    })
                    .collect();
                let finetune = pairs
                    .iter()
                    .filter(|p| p.provenance == Provenance::NativeSft)
                    .map(tokenize)
                    .collect::<StageResult<_>>()?;
                TrainData::TwoStage { pretrain, finetune }
            }
        };
        let (model, trace) = train(&data, cfg, tok.vocab_size(), tok.pad_id()).map_err(s)?;
        trace.write_csv(&dir.join("loss_trace.csv")).map_err(s)?;
        model.save(&dir.join(CHECKPOINT)).map_err(s)?;

        let losses: Vec<f64> = trace.losses().collect();
        let k = losses.len().min(10);
        let head = losses[..k].iter().sum::<f64>() / k as f64;
        let tail = losses[losses.len() - k..].iter().sum::<f64>() / k as f64;
        let jump = cfg
            .boundary_step
            .filter(|_| cfg.mode == TrainMode::TwoStage)
            .and_then(|b| boundary_jump(&trace, b, k.max(1)).ok());
        write_json(
            &dir.join("summary.json"),
            &json!({
                "mode": cfg.mode,
                "steps": losses.len(),
                "mean_loss_first_steps": head,
                "mean_loss_last_steps": tail,
                "boundary_jump": jump,
                "hyperparameters": cfg.hyperparameter_names(),
            }),
        )?;
        Ok(format!("{} steps, mean loss {head:.4} -> {tail:.4}", losses.len()))
    }

    fn eval(&self, dir: &Path) -> StageResult<String> {
        let Some(exam) = &self.cfg.eval.exam else {
            fs::write(dir.join("report.txt"), "no exam configured\n").map_err(s)?;
            return Ok("skipped (no eval.exam configured)".into());
        };
        let items: Vec<ExamItem> = read_jsonl(exam)?;
        for item in &items {
            item.validate().map_err(s)?;
        }
        let outputs: HashMap<String, String> = match &self.cfg.eval.outputs {
            Some(p) => read_jsonl::<ModelOutput>(p)?
                .into_iter()
                .map(|o| (o.item_id, o.output))
                .collect(),
            None => {
                let model = ToyModel::load(&self.dir(Stage::Train).join(CHECKPOINT)).map_err(s)?;
                let answers: Vec<ModelOutput> = items
                    .iter()
                    .map(|item| ModelOutput {
                        item_id: item.item_id.clone(),
                        output: toy_answer(&model, item),
                    })
                    .collect();
                write_jsonl(&dir.join("outputs.jsonl"), &answers)?;
                answers.into_iter().map(|o| (o.item_id, o.output)).collect()
            }
        };
        let report = score_benchmark(&items, &outputs);
        let mut text = report.to_table();
        let pairwise = match &self.cfg.eval.judgments {
            Some(p) => {
                let tally = aggregate_pairwise(&read_jsonl::<JudgeRecord>(p)?);
                let (w, t, f) = tally.percentages();
                text.push_str(&format!(
                    "\npairwise ({} judged): win {w:.1}%  tie {t:.1}%  fail {f:.1}%\n",
                    tally.total()
                ));
                Some(tally)
            }
            None => None,
        };
        fs::write(dir.join("report.txt"), &text).map_err(s)?;
        write_json(&dir.join("report.json"), &json!({ "benchmarks": report, "pairwise": pairwise }))?;
        Ok(format!(
            "{} items over {} benchmark(s), average accuracy {:.2}%",
            items.len(),
            report.rows.len(),
            report.average * 100.0
        ))
    }
}

fn hex_of(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The option label whose first byte the model rates most likely right
/// after the prompt and separator.
fn toy_answer(model: &ToyModel, item: &ExamItem) -> String {
    let tok = ByteTokenizer;
    let mut history = tok.encode(&format_mcq_prompt(item));
    history.push(tok.sep_id());
    let probs = model.next_token_probs(&history);
    let best = item
        .labels()
        .into_iter()
        .max_by(|a, b| probs[*a as usize].total_cmp(&probs[*b as usize]).then(b.cmp(a)));
    match best {
        Some(label) => format!("Answer: {label}"),
        None => String::new(),
    }
}
