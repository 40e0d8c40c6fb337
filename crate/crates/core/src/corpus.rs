//! Raw documents: types, ingestion, normalization and script-based language id.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Default cap on a single document's size before it is split.
pub const DEFAULT_MAX_DOC_BYTES: usize = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("language detection needs non-empty text")]
    EmptyText,
    #[error("unknown {what} `{value}`")]
    UnknownVariant { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Web,
    Book,
    Encyclopedia,
    Literature,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [
        SourceKind::Web,
        SourceKind::Book,
        SourceKind::Encyclopedia,
        SourceKind::Literature,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Web => "web",
            SourceKind::Book => "book",
            SourceKind::Encyclopedia => "encyclopedia",
            SourceKind::Literature => "literature",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownVariant {
                what: "source kind",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
    Other,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
            Language::Other => "other",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zh" => Ok(Language::Zh),
            "en" => Ok(Language::En),
            "other" => Ok(Language::Other),
            _ => Err(CorpusError::UnknownVariant {
                what: "language",
                value: s.to_string(),
            }),
        }
    }
}

/// One source record after normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub source_kind: SourceKind,
    pub language: Language,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

/// Document counts per (language, source kind) cell.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "StatsRepr", from = "StatsRepr")]
pub struct CorpusStats {
    cells: BTreeMap<(Language, SourceKind), u64>,
    total_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct StatsRepr {
    cells: Vec<StatsCell>,
    #[serde(default)]
    total: u64,
    #[serde(default)]
    total_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct StatsCell {
    language: Language,
    source_kind: SourceKind,
    documents: u64,
}

impl From<CorpusStats> for StatsRepr {
    fn from(stats: CorpusStats) -> Self {
        StatsRepr {
            total: stats.total(),
            total_bytes: stats.total_bytes,
            cells: stats
                .cells
                .iter()
                .map(|(&(language, source_kind), &documents)| StatsCell {
                    language,
                    source_kind,
                    documents,
                })
                .collect(),
        }
    }
}

impl From<StatsRepr> for CorpusStats {
    fn from(repr: StatsRepr) -> Self {
        let mut stats = CorpusStats {
            total_bytes: repr.total_bytes,
            ..Default::default()
        };
        for cell in repr.cells {
            stats.add_count(cell.language, cell.source_kind, cell.documents);
        }
        stats
    }
}

impl CorpusStats {
    pub fn record(&mut self, doc: &RawDocument) {
        self.add_count(doc.language, doc.source_kind, 1);
        self.total_bytes += doc.text.len() as u64;
    }

    pub fn add_count(&mut self, language: Language, kind: SourceKind, n: u64) {
        *self.cells.entry((language, kind)).or_default() += n;
    }

    pub fn count(&self, language: Language, kind: SourceKind) -> u64 {
        self.cells.get(&(language, kind)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.cells.values().sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn nonzero_cells(&self) -> usize {
        self.cells.values().filter(|&&n| n > 0).count()
    }

    pub fn cells(&self) -> impl Iterator<Item = (Language, SourceKind, u64)> + '_ {
        self.cells.iter().map(|(&(l, k), &n)| (l, k, n))
    }

    /// Read a stats file. A `total` field, if present, is ignored; the
    /// total is always the sum of the cells.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let bytes = std::fs::read(path).map_err(|source| CorpusError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Language-by-source table with row and column totals.
    pub fn to_table(&self) -> String {
        let langs: Vec<Language> = {
            let mut l: Vec<Language> = self.cells.keys().map(|k| k.0).collect();
            l.dedup();
            l
        };
        let mut out = format!("{:<10}", "language");
        for k in SourceKind::ALL {
            out.push_str(&format!("{:>14}", k.as_str()));
        }
        out.push_str(&format!("{:>14}\n", "total"));
        for l in langs {
            out.push_str(&format!("{:<10}", l.as_str()));
            let mut row = 0;
            for k in SourceKind::ALL {
                let n = self.count(l, k);
                row += n;
                out.push_str(&format!("{n:>14}"));
            }
            out.push_str(&format!("{row:>14}\n"));
        }
        out.push_str(&format!("{:<10}", "total"));
        for k in SourceKind::ALL {
            let col: u64 = self.cells().filter(|c| c.1 == k).map(|c| c.2).sum();
            out.push_str(&format!("{col:>14}"));
        }
        out.push_str(&format!("{:>14}\n", self.total()));
        out
    }

    pub fn merge(&mut self, other: &CorpusStats) {
        for (l, k, n) in other.cells() {
            self.add_count(l, k, n);
        }
        self.total_bytes += other.total_bytes;
    }
}

/// Canonical text form used by every downstream stage.
///
/// Control characters other than newline and tab are dropped, horizontal
/// whitespace runs become one space, lines are trimmed, runs of blank lines
/// collapse to a single paragraph break, and the result is NFC-composed.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_newlines = 0usize;
    let mut pending_space = false;
    for c in text.chars() {
        if c == '\n' {
            pending_newlines += 1;
            pending_space = false;
            continue;
        }
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if c.is_control() {
            continue;
        }
        if !out.is_empty() {
            if pending_newlines > 0 {
                out.push_str(if pending_newlines > 1 { "\n\n" } else { "\n" });
            } else if pending_space {
                out.push(' ');
            }
        }
        pending_newlines = 0;
        pending_space = false;
        out.push(c);
    }
    if out.is_ascii() {
        out
    } else {
        out.nfc().collect()
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2FA1F)
}

fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic()
        || (matches!(c as u32, 0x00C0..=0x024F) && c != '\u{00D7}' && c != '\u{00F7}')
}

/// Codepoint-class tallies over the non-whitespace characters of a text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScriptHistogram {
    pub cjk: usize,
    pub latin: usize,
    pub other: usize,
}

impl ScriptHistogram {
    pub fn of(text: &str) -> Self {
        let mut h = ScriptHistogram::default();
        for c in text.chars().filter(|c| !c.is_whitespace()) {
            if is_cjk(c) {
                h.cjk += 1;
            } else if is_latin_letter(c) {
                h.latin += 1;
            } else {
                h.other += 1;
            }
        }
        h
    }

    pub fn total(&self) -> usize {
        self.cjk + self.latin + self.other
    }

    pub fn classify(&self) -> Result<Language, CorpusError> {
        let total = self.total();
        if total == 0 {
            return Err(CorpusError::EmptyText);
        }
        let cjk = self.cjk as f64 / total as f64;
        let latin = self.latin as f64 / total as f64;
        Ok(if cjk >= 0.30 {
            Language::Zh
        } else if latin >= 0.60 && cjk < 0.05 {
            Language::En
        } else {
            Language::Other
        })
    }
}

/// zh if CJK ideographs make up at least 30% of non-whitespace codepoints,
/// en if Latin letters make up at least 60% and CJK under 5%, else other.
pub fn detect_language(text: &str) -> Result<Language, CorpusError> {
    ScriptHistogram::of(text).classify()
}

/// Split `text` into pieces of at most `max_bytes`, preferring paragraph
/// breaks, then line breaks, then any char boundary. Concatenating the
/// pieces with `"\n\n"` (where a paragraph split happened) is lossless up to
/// the dropped separators.
pub fn split_oversized(text: &str, max_bytes: usize) -> Vec<String> {
    if text.len() <= max_bytes {
        return vec![text.to_string()];
    }
    let mut parts = Vec::new();
    let mut current = String::new();
    for para in text.split("\n\n") {
        for piece in hard_split(para, max_bytes) {
            let extra = if current.is_empty() { 0 } else { 2 };
            if !current.is_empty() && current.len() + extra + piece.len() > max_bytes {
                parts.push(std::mem::take(&mut current));
            }
            if !current.is_empty() {
                current.push_str("\n\n");
            }
            current.push_str(piece);
        }
    }
    if !current.is_empty() {
        parts.push(current);
    }
    parts
}

fn hard_split(mut s: &str, max_bytes: usize) -> Vec<&str> {
    let mut out = Vec::new();
    while s.len() > max_bytes {
        let mut cut = max_bytes;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        if let Some(nl) = s[..cut].rfind('\n') {
            if nl > 0 {
                cut = nl;
            }
        }
        out.push(s[..cut].trim_end_matches('\n'));
        s = s[cut..].trim_start_matches('\n');
    }
    if !s.is_empty() {
        out.push(s);
    }
    out
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub max_doc_bytes: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            max_doc_bytes: DEFAULT_MAX_DOC_BYTES,
        }
    }
}

/// Per-stream skip counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCounters {
    pub yielded: u64,
    pub malformed: u64,
    pub empty: u64,
    pub duplicate_ids: u64,
    pub split_parts: u64,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    meta: Option<BTreeMap<String, String>>,
}

enum Source {
    Jsonl { path: PathBuf, lines: Lines<BufReader<File>> },
    Text(std::vec::IntoIter<(String, String)>),
}

/// Lazily yields normalized documents from one file or directory.
pub struct DocumentStream {
    sources: std::vec::IntoIter<PathBuf>,
    current: Option<Source>,
    kind: SourceKind,
    language_hint: Option<Language>,
    opts: IngestOptions,
    seen: HashSet<String>,
    pending: std::collections::VecDeque<RawDocument>,
    counters: IngestCounters,
    io_error: Option<CorpusError>,
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("json") | Some("ndjson")
    )
}

/// Open `path` (a JSONL file, a plain-text file holding one document, or a
/// directory of such files, visited in name order).
pub fn ingest(
    path: &Path,
    kind: SourceKind,
    language_hint: Option<Language>,
    opts: IngestOptions,
) -> Result<DocumentStream, CorpusError> {
    let unreadable = |source| CorpusError::Unreadable {
        path: path.to_path_buf(),
        source,
    };
    let meta = std::fs::metadata(path).map_err(unreadable)?;
    let files = if meta.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(unreadable)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    Ok(DocumentStream {
        sources: files.into_iter(),
        current: None,
        kind,
        language_hint,
        opts,
        seen: HashSet::new(),
        pending: Default::default(),
        counters: IngestCounters::default(),
        io_error: None,
    })
}

impl DocumentStream {
    pub fn counters(&self) -> &IngestCounters {
        &self.counters
    }

    /// Reserve ids already emitted by other streams of the same run.
    pub fn with_seen_ids(mut self, seen: HashSet<String>) -> Self {
        self.seen = seen;
        self
    }

    pub fn into_seen_ids(self) -> HashSet<String> {
        self.seen
    }

    /// An I/O failure that ended the stream early, if any.
    pub fn take_error(&mut self) -> Option<CorpusError> {
        self.io_error.take()
    }

    fn open(&mut self, path: PathBuf) -> Result<Source, CorpusError> {
        let unreadable = |source| CorpusError::Unreadable {
            path: path.clone(),
            source,
        };
        if is_jsonl(&path) {
            let file = File::open(&path).map_err(unreadable)?;
            Ok(Source::Jsonl {
                lines: BufReader::new(file).lines(),
                path,
            })
        } else {
            let text = std::fs::read_to_string(&path).map_err(unreadable)?;
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(Source::Text(vec![(id, text)].into_iter()))
        }
    }

    fn admit(&mut self, id: String, title: Option<String>, text: &str, meta: BTreeMap<String, String>) {
        let id = id.trim().to_string();
        if id.is_empty() {
            self.counters.malformed += 1;
            return;
        }
        let text = normalize_text(text);
        if text.is_empty() {
            self.counters.empty += 1;
            return;
        }
        if !self.seen.insert(id.clone()) {
            self.counters.duplicate_ids += 1;
            return;
        }
        let title = title.map(|t| normalize_text(&t)).filter(|t| !t.is_empty());
        let parts = split_oversized(&text, self.opts.max_doc_bytes);
        let n_parts = parts.len();
        for (i, part) in parts.into_iter().enumerate() {
            let language = match self.language_hint {
                Some(l) => l,
                None => detect_language(&part).unwrap_or(Language::Other),
            };
            let mut meta = meta.clone();
            let part_id = if n_parts > 1 {
                self.counters.split_parts += 1;
                meta.insert("base_id".into(), id.clone());
                format!("{id}#part{i}")
            } else {
                id.clone()
            };
            self.pending.push_back(RawDocument {
                id: part_id,
                source_kind: self.kind,
                language,
                title: title.clone(),
                text: part,
                meta,
            });
        }
    }
}

impl Iterator for DocumentStream {
    type Item = RawDocument;

    fn next(&mut self) -> Option<RawDocument> {
        loop {
            if let Some(doc) = self.pending.pop_front() {
                self.counters.yielded += 1;
                return Some(doc);
            }
            let Some(source) = self.current.as_mut() else {
                let path = self.sources.next()?;
                match self.open(path) {
                    Ok(src) => self.current = Some(src),
                    Err(e) => {
                        self.io_error = Some(e);
                        self.sources = Vec::new().into_iter();
                        return None;
                    }
                }
                continue;
            };
            match source {
                Source::Jsonl { path, lines } => match lines.next() {
                    None => self.current = None,
                    Some(Err(e)) => {
                        self.io_error = Some(CorpusError::Unreadable {
                            path: path.clone(),
                            source: e,
                        });
                        self.current = None;
                        self.sources = Vec::new().into_iter();
                        return None;
                    }
                    Some(Ok(line)) => {
                        if line.trim().is_empty() {
                            continue;
                        }
                        match serde_json::from_str::<RawRecord>(&line) {
                            Ok(rec) => self.admit(rec.id, rec.title, &rec.text, rec.meta.unwrap_or_default()),
                            Err(_) => self.counters.malformed += 1,
                        }
                    }
                },
                Source::Text(items) => match items.next() {
                    None => self.current = None,
                    Some((id, text)) => self.admit(id, None, &text, BTreeMap::new()),
                },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("a\u{0000}  b "), "a b");
        assert_eq!(normalize_text("already normal"), "already normal");
        assert_eq!(normalize_text("e\u{0301}"), "\u{00e9}");
        assert_eq!(normalize_text("  x\t\ty \r\n\n\n z  "), "x y\n\nz");
        assert_eq!(normalize_text("line one \n line two"), "line one\nline two");
        assert_eq!(normalize_text(" \u{0007} \n "), "");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "(?s).{0,80}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn normalize_is_idempotent_on_combining_sequences(
            s in proptest::collection::vec(prop_oneof![
                Just('e'), Just('\u{0301}'), Just(' '), Just('\n'), Just('\u{0000}'), Just('\u{1100}'), Just('\u{1161}'), Just('a')
            ], 0..30)
        ) {
            let s: String = s.into_iter().collect();
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }
    }

    #[test]
    fn language_examples() {
        assert_eq!(detect_language("患者主诉头痛三天").unwrap(), Language::Zh);
        assert_eq!(detect_language("The patient reports headache.").unwrap(), Language::En);
        assert!(matches!(detect_language("   "), Err(CorpusError::EmptyText)));
        assert!(matches!(detect_language(""), Err(CorpusError::EmptyText)));
    }

    #[test]
    fn mixed_string_follows_hand_tally() {
        // "头痛发热" = 4 CJK; "fever" = 5 Latin; "!" = 1 other; space excluded.
        // Tally by hand: cjk 4/10 = 0.40 >= 0.30, so zh.
        let s = "头痛发热 fever!";
        let h = ScriptHistogram::of(s);
        assert_eq!(h, ScriptHistogram { cjk: 4, latin: 5, other: 1 });
        assert_eq!(detect_language(s).unwrap(), Language::Zh);

        // 50/50 at a lower CJK share: "痛" (1) + "painxx" (6) + "12" (2) + "头" (1):
        // cjk 2/10 = 0.2 < 0.30; latin 6/10 = 0.6 but cjk >= 0.05, so other.
        let s = "痛 painxx 12 头";
        let h = ScriptHistogram::of(s);
        assert_eq!(h, ScriptHistogram { cjk: 2, latin: 6, other: 2 });
        assert_eq!(detect_language(s).unwrap(), Language::Other);

        // 5 CJK + 5 Latin: cjk 0.5, zh.
        assert_eq!(detect_language("abcde头痛发热咳").unwrap(), Language::Zh);
    }

    #[test]
    fn language_is_function_of_histogram() {
        let a = detect_language("ab 头 c").unwrap();
        let b = detect_language("头cab").unwrap();
        assert_eq!(a, b);
    }

    fn write_file(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn ingest_skips_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "c.jsonl",
            concat!(
                r#"{"id":"a","text":"Aspirin is an analgesic."}"#, "\n",
                r#"{"id":"b","text":"头孢类抗生素","title":"头孢"}"#, "\n",
                "{not json\n",
                r#"{"id":"c","text":"third","meta":{"url":"x"}}"#, "\n",
            ),
        );
        let mut stream = ingest(&p, SourceKind::Web, None, IngestOptions::default()).unwrap();
        let docs: Vec<_> = stream.by_ref().collect();
        assert_eq!(docs.len(), 3);
        assert_eq!(stream.counters().malformed, 1);
        assert_eq!(docs[1].language, Language::Zh);
        assert_eq!(docs[1].title.as_deref(), Some("头孢"));
        assert_eq!(docs[2].meta["url"], "x");
    }

    #[test]
    fn ingest_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "e.jsonl", "");
        let mut stats = CorpusStats::default();
        for d in ingest(&p, SourceKind::Book, None, IngestOptions::default()).unwrap() {
            stats.record(&d);
        }
        assert_eq!(stats.total(), 0);
    }

    #[test]
    fn ingest_missing_path_is_fatal() {
        let r = ingest(Path::new("/nonexistent/x.jsonl"), SourceKind::Web, None, IngestOptions::default());
        assert!(matches!(r, Err(CorpusError::Unreadable { .. })));
    }

    #[test]
    fn ingest_rejects_duplicate_and_empty_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "d.jsonl",
            concat!(
                r#"{"id":"a","text":"one"}"#, "\n",
                r#"{"id":"a","text":"two"}"#, "\n",
                r#"{"id":"b","text":"  \u0000 "}"#, "\n",
                r#"{"id":"","text":"x"}"#, "\n",
            ),
        );
        let mut s = ingest(&p, SourceKind::Web, Some(Language::En), IngestOptions::default()).unwrap();
        let docs: Vec<_> = s.by_ref().collect();
        assert_eq!(docs.len(), 1);
        let c = s.counters();
        assert_eq!((c.duplicate_ids, c.empty, c.malformed), (1, 1, 1));
    }

    #[test]
    fn books_are_split_at_paragraphs() {
        let dir = tempfile::tempdir().unwrap();
        let para = "word ".repeat(40);
        let body = [para.trim(); 10].join("\n\n");
        let p = write_file(dir.path(), "book1.txt", &body);
        let docs: Vec<_> = ingest(&p, SourceKind::Book, None, IngestOptions { max_doc_bytes: 500 })
            .unwrap()
            .collect();
        assert!(docs.len() > 1);
        for d in &docs {
            assert!(d.text.len() <= 500);
            assert_eq!(d.meta["base_id"], "book1");
            assert!(d.id.starts_with("book1#part"));
        }
        let joined: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        assert_eq!(joined.join("\n\n"), body);
    }

    #[test]
    fn eight_cell_counts() {
        // One document per cell of the bilingual, four-genre grid.
        let dir = tempfile::tempdir().unwrap();
        let mut stats = CorpusStats::default();
        for (lang, text) in [(Language::Zh, "中文医学文本"), (Language::En, "English medical text")] {
            for kind in SourceKind::ALL {
                let body = format!("{{\"id\":\"{lang}-{kind}\",\"text\":\"{text}\"}}\n");
                let p = write_file(dir.path(), &format!("{lang}-{kind}.jsonl"), &body);
                for d in ingest(&p, kind, None, IngestOptions::default()).unwrap() {
                    assert_eq!(d.language, lang);
                    stats.record(&d);
                }
            }
        }
        assert_eq!(stats.nonzero_cells(), 8);
        assert_eq!(stats.total(), 8);
        let json = serde_json::to_string(&stats).unwrap();
        let back: CorpusStats = serde_json::from_str(&json).unwrap();
        assert_eq!(back, stats);
    }
}
