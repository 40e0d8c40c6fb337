//! The run configuration file (TOML, one section per stage).
//!
//! ```toml
//! target_language = "zh"
//!
//! [paths]
//! workdir = "work"
//!
//! [[inputs]]
//! path = "corpus/web_zh.jsonl"
//! source_kind = "web"
//! language = "zh"          # optional hint; detected when absent
//!
//! [sft]
//! paths = ["sft/pairs.jsonl"]
//!
//! [filter]
//! min_chars = 200
//! target_rate = 0.014
//! lexicon_files = { zh = "lexicon_zh.tsv" }
//!
//! [dedup]
//! [unify]
//! [rewriter]
//! [mix]
//! [train]
//! [eval]
//! exam = "exam.jsonl"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compiler::MixSpec;
use crate::corpus::{Language, SourceKind};
use crate::dedup::DedupParams;
use crate::quality::{load_term_list, FilterConfig, QualityError};
use crate::rewriter::RewriterSettings;
use crate::trainer::TrainConfig;
use crate::unify::PairSettings;

/// A single field-level validation failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigIssue {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigIssue>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsSection {
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub path: PathBuf,
    pub source_kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<Language>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftSection {
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSection {
    #[serde(flatten)]
    pub config: FilterConfig,
    /// Per-language lexicon files (`term<TAB>weight` lines); replace the built-in lists.
    pub lexicon_files: BTreeMap<Language, PathBuf>,
    /// Per-language ad keyword files (one term per line).
    pub ad_keyword_files: BTreeMap<Language, PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnifySection {
    #[serde(flatten)]
    pub pairs: PairSettings,
    /// Blocklist file (`rule_id<TAB>pattern`); built-in rules when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ethics_rules: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exam: Option<PathBuf>,
    /// Completed model outputs; when absent the trained toy model answers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
    /// Judge verdicts to tally.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judgments: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub target_language: Language,
    pub paths: PathsSection,
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub sft: SftSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub dedup: DedupParams,
    #[serde(default)]
    pub unify: UnifySection,
    #[serde(default)]
    pub rewriter: RewriterSettings,
    #[serde(default)]
    pub mix: MixSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parse without validating; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Read, resolve and validate a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base, path)?;
        let issues = cfg.validate();
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.workdir);
        self.inputs.iter_mut().for_each(|i| fix(&mut i.path));
        self.sft.paths.iter_mut().for_each(fix);
        self.filter.lexicon_files.values_mut().for_each(fix);
        self.filter.ad_keyword_files.values_mut().for_each(fix);
        self.unify.ethics_rules.iter_mut().for_each(fix);
        self.rewriter.cache_dir.iter_mut().for_each(fix);
        self.eval.exam.iter_mut().for_each(fix);
        self.eval.outputs.iter_mut().for_each(fix);
        self.eval.judgments.iter_mut().for_each(fix);
    }

    /// Every problem found, each naming its field.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if self.target_language == Language::Other {
            issues.push(ConfigIssue::new("target_language", "must be zh or en"));
        }
        let mut must_exist = |field: String, p: &Path| {
            if !p.exists() {
                issues.push(ConfigIssue::new(field, format!("path {} does not exist", p.display())));
            }
        };
        for (i, input) in self.inputs.iter().enumerate() {
            must_exist(format!("inputs[{i}].path"), &input.path);
        }
        for (i, p) in self.sft.paths.iter().enumerate() {
            must_exist(format!("sft.paths[{i}]"), p);
        }
        for (lang, p) in &self.filter.lexicon_files {
            must_exist(format!("filter.lexicon_files.{lang}"), p);
        }
        for (lang, p) in &self.filter.ad_keyword_files {
            must_exist(format!("filter.ad_keyword_files.{lang}"), p);
        }
        if let Some(p) = &self.unify.ethics_rules {
            must_exist("unify.ethics_rules".into(), p);
        }
        if let Some(p) = &self.eval.exam {
            must_exist("eval.exam".into(), p);
        }
        if let Some(p) = &self.eval.outputs {
            must_exist("eval.outputs".into(), p);
        }
        if let Some(p) = &self.eval.judgments {
            must_exist("eval.judgments".into(), p);
        }
        if self.inputs.is_empty() && self.sft.paths.is_empty() {
            issues.push(ConfigIssue::new("inputs", "at least one corpus input or sft path is required"));
        }
        issues.extend(self.filter.config.validate("filter"));
        issues.extend(self.dedup.validate("dedup"));
        issues.extend(self.unify.pairs.validate("unify"));
        issues.extend(self.rewriter.validate("rewriter"));
        issues.extend(self.mix.validate("mix"));
        issues.extend(self.train.validate("train"));
        issues
    }

    /// Apply a command-line seed to every seeded stage.
    pub fn override_seed(&mut self, seed: u64) {
        self.mix.seed = seed;
        self.train.seed = seed;
    }

    /// Filter settings with any configured term files loaded.
    pub fn filter_config(&self) -> Result<FilterConfig, QualityError> {
        let mut cfg = self.filter.config.clone();
        for (&lang, path) in &self.filter.lexicon_files {
            cfg.domain_lexicon.insert(lang, load_term_list(path)?);
        }
        for (&lang, path) in &self.filter.ad_keyword_files {
            cfg.ad_keywords.insert(lang, load_term_list(path)?.into_keys().collect());
        }
        Ok(cfg)
    }

    /// SHA-256 over the canonical JSON form of the whole configuration.
    pub fn content_hash(&self) -> String {
        crate::hashing::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
