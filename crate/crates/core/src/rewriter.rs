//! Text-rewriting backends behind a caching, retrying, concurrency-bounded client.
//!
//! Two backends ship: [`MockBackend`], a pure template function used by tests
//! and offline runs, and [`HttpBackend`], which speaks a minimal
//! chat-completion shape (one user message, temperature 0).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::ConfigIssue;
use crate::corpus::Language;
use crate::hashing::sha256_fields;

/// Environment variable holding the bearer credential for [`HttpBackend`].
pub const API_KEY_ENV: &str = "MONOSTAGE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    GenQuestion,
    GenAnswer,
    TranslateUnify,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::GenQuestion => "gen_question",
            TemplateId::GenAnswer => "gen_answer",
            TemplateId::TranslateUnify => "translate_unify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRequest {
    pub template_id: TemplateId,
    pub passage: String,
    pub target_language: Language,
    pub model_id: String,
}

impl RewriteRequest {
    pub fn new(template_id: TemplateId, passage: impl Into<String>, target_language: Language, model_id: impl Into<String>) -> Self {
        RewriteRequest {
            template_id,
            passage: passage.into(),
            target_language,
            model_id: model_id.into(),
        }
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey(sha256_fields([
            self.template_id.as_str().as_bytes(),
            self.passage.as_bytes(),
            self.target_language.as_str().as_bytes(),
            self.model_id.as_bytes(),
        ]))
    }
}

/// SHA-256 over (template, passage, target language, model).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey(pub [u8; 32]);

impl CacheKey {
    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retryable: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RewriteError {
    #[error("rewriter unavailable after {attempts} attempt(s): {last}")]
    RewriterUnavailable { attempts: u32, last: BackendError },
    #[error("backend returned an empty rewrite")]
    EmptyRewrite,
    #[error("rewrite request has an empty passage")]
    EmptyPassage,
    #[error("rewrite cache: {0}")]
    Cache(#[from] io::Error),
}

pub trait Backend: Send + Sync {
    fn complete(&self, req: &RewriteRequest) -> Result<String, BackendError>;
}

/// The deterministic offline template backend.
pub fn mock_backend(req: &RewriteRequest) -> String {
    let lang = req.target_language;
    match req.template_id {
        TemplateId::GenQuestion => {
            let prefix: String = req.passage.chars().take(8).collect();
            format!("Q[{lang}]: {prefix}?")
        }
        TemplateId::GenAnswer => format!("A[{lang}]: {}", req.passage),
        TemplateId::TranslateUnify => format!("[{lang}] {}", req.passage),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl Backend for MockBackend {
    fn complete(&self, req: &RewriteRequest) -> Result<String, BackendError> {
        Ok(mock_backend(req))
    }
}

fn language_name(lang: Language) -> &'static str {
    match lang {
        Language::Zh => "Chinese",
        Language::En => "English",
        Language::Other => "the source language",
    }
}

/// The user message sent to a live model for `req`.
pub fn render_prompt(req: &RewriteRequest) -> String {
    let lang = language_name(req.target_language);
    match req.template_id {
        TemplateId::GenQuestion => format!(
            "Write one question in {lang} that is fully answered by the passage below. \
             Reply with the question only.\n\nPassage:\n{}",
            req.passage
        ),
        TemplateId::GenAnswer => format!(
            "Restate the knowledge in the passage below as a direct, self-contained answer in {lang}. \
             Do not add facts that are not in the passage. Reply with the answer only.\n\nPassage:\n{}",
            req.passage
        ),
        TemplateId::TranslateUnify => format!(
            "Translate the text below into {lang}, keeping its meaning and layout. \
             Reply with the translation only.\n\n{}",
            req.passage
        ),
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f32,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

/// Chat-completion HTTP backend.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            endpoint: endpoint.into(),
            api_key,
            agent,
        }
    }

    /// Read the credential from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok(), timeout)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &RewriteRequest) -> Result<String, BackendError> {
        let prompt = render_prompt(req);
        let body = ChatRequest {
            model: &req.model_id,
            temperature: 0.0,
            messages: [ChatMessage {
                role: "user",
                content: &prompt,
            }],
        };
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| BackendError::transient(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(BackendError::permanent(format!("HTTP {status}")));
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::transient(format!("bad response body: {e}")))?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

/// One file per response under a two-level hex fan-out: `ab/cd/abcd…`.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DiskCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let hex = key.hex();
        self.root.join(&hex[0..2]).join(&hex[2..4]).join(hex)
    }

    pub fn get(&self, key: &CacheKey) -> io::Result<Option<String>> {
        match fs::read(self.entry_path(key)) {
            Ok(bytes) => String::from_utf8(bytes)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, key: &CacheKey, response: &str) -> io::Result<()> {
        let path = self.entry_path(key);
        let dir = path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir)?;
        // Write-then-rename so readers never see a torn entry.
        let tmp = dir.join(format!(".{}.{}.tmp", key.hex(), std::process::id()));
        fs::write(&tmp, response.as_bytes())?;
        fs::rename(&tmp, &path)
    }
}

/// Counting semaphore bounding in-flight backend calls.
#[derive(Debug)]
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Limiter {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewriterSettings {
    pub endpoint: String,
    pub model_id: String,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RewriterSettings {
    fn default() -> Self {
        RewriterSettings {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model_id: "mock".into(),
            max_retries: 3,
            max_in_flight: 4,
            cache_dir: None,
            backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

impl RewriterSettings {
    pub fn validate(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if self.max_in_flight == 0 {
            issues.push(ConfigIssue::new(format!("{prefix}.max_in_flight"), "must be at least 1"));
        }
        if self.model_id.trim().is_empty() {
            issues.push(ConfigIssue::new(format!("{prefix}.model_id"), "must not be empty"));
        }
        if self.max_retries > 16 {
            issues.push(ConfigIssue::new(format!("{prefix}.max_retries"), "must be at most 16"));
        }
        issues
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RewriterStats {
    pub cache_hits: u64,
    pub backend_attempts: u64,
    pub failures: u64,
}

/// Cache-first client with exponential-backoff retries.
///
/// Concurrent calls are allowed. Two simultaneous misses on the same key
/// may both reach the backend; the last writer wins, which is harmless when
/// the backend is deterministic.
pub struct Rewriter {
    backend: Arc<dyn Backend>,
    cache: Option<DiskCache>,
    model_id: String,
    max_retries: u32,
    backoff: Duration,
    limiter: Limiter,
    cache_hits: AtomicU64,
    attempts: AtomicU64,
    failures: AtomicU64,
}

impl Rewriter {
    pub fn new(backend: Arc<dyn Backend>, settings: &RewriterSettings) -> Self {
        Rewriter {
            backend,
            cache: settings.cache_dir.as_ref().map(DiskCache::new),
            model_id: settings.model_id.clone(),
            max_retries: settings.max_retries,
            backoff: Duration::from_millis(settings.backoff_ms),
            limiter: Limiter::new(settings.max_in_flight),
            cache_hits: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            failures: AtomicU64::new(0),
        }
    }

    /// Offline client over [`MockBackend`] with no disk cache.
    pub fn mock() -> Self {
        Self::new(
            Arc::new(MockBackend),
            &RewriterSettings {
                model_id: "mock".into(),
                ..Default::default()
            },
        )
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn stats(&self) -> RewriterStats {
        RewriterStats {
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            backend_attempts: self.attempts.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }

    /// Build a request against this client's model and run it.
    pub fn run(&self, template: TemplateId, passage: &str, target: Language) -> Result<String, RewriteError> {
        self.rewrite(&RewriteRequest::new(template, passage, target, self.model_id.clone()))
    }

    pub fn rewrite(&self, req: &RewriteRequest) -> Result<String, RewriteError> {
        if req.passage.trim().is_empty() {
            return Err(RewriteError::EmptyPassage);
        }
        let key = req.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key)? {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit);
            }
        }

        let mut attempt = 0u32;
        let response = loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let result = {
                let _permit = self.limiter.acquire();
                self.backend.complete(req)
            };
            match result {
                Ok(text) => break text,
                Err(e) if e.retryable && attempt <= self.max_retries => {
                    let delay = self.backoff.saturating_mul(1u32 << (attempt - 1).min(16));
                    tracing::debug!(attempt, error = %e, delay_ms = delay.as_millis() as u64, "rewrite retry");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(last) => {
                    self.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(RewriteError::RewriterUnavailable { attempts: attempt, last });
                }
            }
        };

        if response.trim().is_empty() {
            self.failures.fetch_add(1, Ordering::Relaxed);
            return Err(RewriteError::EmptyRewrite);
        }
        if let Some(cache) = &self.cache {
            cache.put(&key, &response)?;
        }
        Ok(response)
    }
}
