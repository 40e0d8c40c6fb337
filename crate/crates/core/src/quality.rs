//! Heuristic quality filters and top-fraction selection.
//!
//! Filters run in a fixed order (length, punctuation, ads, relevance). Every
//! filter is scored for every document so verdicts can be audited, but only
//! the first failing filter is reported as the rejection reason.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ConfigIssue;
use crate::corpus::{Language, RawDocument};

pub const REASON_EMPTY: &str = "empty";
pub const REASON_LENGTH: &str = "length";
pub const REASON_PUNCT: &str = "punctuation";
pub const REASON_ADS: &str = "ads";
pub const REASON_RELEVANCE: &str = "relevance";
/// Survived every filter but fell below the selection quota.
pub const REASON_RANK_CUTOFF: &str = "rank_cutoff";

/// Filter names in evaluation order; also the keys of [`QualityVerdict::scores`].
pub const FILTER_ORDER: [&str; 4] = [REASON_LENGTH, REASON_PUNCT, REASON_ADS, REASON_RELEVANCE];

/// A sentence longer than this without terminal punctuation is an error.
pub const LONG_SENTENCE_CHARS: usize = 400;
/// This many identical punctuation marks in a row is an error.
pub const PUNCT_RUN_LEN: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("domain lexicon is empty")]
    EmptyLexicon,
    #[error("cannot read term list {path}: {source}")]
    TermList {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: bad weight `{value}`")]
    BadWeight { path: String, line: usize, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_chars: usize,
    pub max_chars: usize,
    pub max_punct_error_rate: f64,
    pub max_ad_density: f64,
    pub min_domain_score: f64,
    pub target_rate: Option<f64>,
    pub ad_keywords: BTreeMap<Language, Vec<String>>,
    pub domain_lexicon: BTreeMap<Language, BTreeMap<String, f64>>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_chars: 200,
            max_chars: 100_000,
            max_punct_error_rate: 0.3,
            max_ad_density: 0.2,
            min_domain_score: 0.05,
            target_rate: None,
            ad_keywords: default_ad_keywords(),
            domain_lexicon: default_domain_lexicon(),
        }
    }
}

fn default_ad_keywords() -> BTreeMap<Language, Vec<String>> {
    let en = ["buy", "discount", "sale", "cheap", "offer", "click", "subscribe", "free", "deal", "coupon"];
    let zh = ["优惠", "折扣", "促销", "包邮", "点击", "购买", "特价", "代购"];
    BTreeMap::from([
        (Language::En, en.iter().map(|s| s.to_string()).collect()),
        (Language::Zh, zh.iter().map(|s| s.to_string()).collect()),
    ])
}

fn default_domain_lexicon() -> BTreeMap<Language, BTreeMap<String, f64>> {
    let en = [
        "patient", "patients", "disease", "diagnosis", "treatment", "clinical", "symptoms", "symptom",
        "therapy", "drug", "dose", "infection", "chronic", "acute", "hospital", "medical", "medicine",
        "blood", "pain", "fever", "cancer", "surgery", "physician", "syndrome", "pressure", "heart",
    ];
    let zh = [
        "患者", "疾病", "诊断", "治疗", "临床", "症状", "药物", "剂量", "感染", "慢性", "急性", "医院",
        "医学", "血压", "发热", "头痛", "手术", "医生", "综合征", "心脏", "用药",
    ];
    BTreeMap::from([
        (Language::En, en.iter().map(|s| (s.to_string(), 1.0)).collect()),
        (Language::Zh, zh.iter().map(|s| (s.to_string(), 1.0)).collect()),
    ])
}

impl FilterConfig {
    pub fn validate(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if self.min_chars >= self.max_chars {
            issues.push(ConfigIssue::new(
                format!("{prefix}.min_chars"),
                format!("must be less than max_chars ({} >= {})", self.min_chars, self.max_chars),
            ));
        }
        let fractions = [
            ("max_punct_error_rate", Some(self.max_punct_error_rate)),
            ("max_ad_density", Some(self.max_ad_density)),
            ("min_domain_score", Some(self.min_domain_score)),
            ("target_rate", self.target_rate),
        ];
        for (name, value) in fractions {
            if let Some(v) = value {
                if !(0.0..=1.0).contains(&v) {
                    issues.push(ConfigIssue::new(format!("{prefix}.{name}"), format!("must lie in [0, 1], got {v}")));
                }
            }
        }
        issues
    }
}

/// Read a term list: one term per line, optionally `term<TAB>weight`.
/// Weights default to 1.0; blank lines and `#` comments are skipped.
pub fn load_term_list(path: &Path) -> Result<BTreeMap<String, f64>, QualityError> {
    let text = std::fs::read_to_string(path).map_err(|source| QualityError::TermList {
        path: path.display().to_string(),
        source,
    })?;
    let mut terms = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (term, weight) = match line.split_once('\t') {
            Some((t, w)) => {
                let w: f64 = w.trim().parse().map_err(|_| QualityError::BadWeight {
                    path: path.display().to_string(),
                    line: i + 1,
                    value: w.to_string(),
                })?;
                (t, w)
            }
            None => (line, 1.0),
        };
        terms.insert(term.trim().to_string(), weight);
    }
    Ok(terms)
}

fn is_cjk_token_char(c: char) -> bool {
    matches!(c as u32, 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F)
}

/// Word tokens used by the density scores: lowercased alphanumeric runs,
/// with each CJK ideograph standing alone. Punctuation is dropped.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if is_cjk_token_char(c) {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Multi-token term matcher over [`word_tokens`] output.
#[derive(Debug, Clone, Default)]
pub struct TermMatcher {
    by_first: HashMap<String, Vec<(Vec<String>, f64)>>,
}

impl TermMatcher {
    pub fn new<'a, I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        let mut by_first: HashMap<String, Vec<(Vec<String>, f64)>> = HashMap::new();
        for (term, weight) in terms {
            let toks = word_tokens(term);
            if let Some(first) = toks.first().cloned() {
                by_first.entry(first).or_default().push((toks, weight));
            }
        }
        TermMatcher { by_first }
    }

    pub fn is_empty(&self) -> bool {
        self.by_first.is_empty()
    }

    /// Visit every (possibly overlapping) occurrence as `(term_len, weight)`.
    fn for_each_hit(&self, tokens: &[String], mut f: impl FnMut(usize, f64)) {
        for i in 0..tokens.len() {
            if let Some(cands) = self.by_first.get(&tokens[i]) {
                for (term, w) in cands {
                    if tokens[i..].starts_with(term) {
                        f(term.len(), *w);
                    }
                }
            }
        }
    }

    /// Σ weight · occurrences.
    pub fn weighted_hits(&self, tokens: &[String]) -> f64 {
        let mut sum = 0.0;
        self.for_each_hit(tokens, |_, w| sum += w);
        sum
    }

    /// Number of token positions spanned by occurrences (counted per occurrence).
    pub fn covered_tokens(&self, tokens: &[String]) -> usize {
        let mut n = 0;
        self.for_each_hit(tokens, |len, _| n += len);
        n
    }
}

/// min(1, Σ weight(term)·count(term) / token_count); 0 for token-less text.
pub fn domain_relevance(text: &str, lexicon: &BTreeMap<String, f64>) -> Result<f64, QualityError> {
    if lexicon.is_empty() {
        return Err(QualityError::EmptyLexicon);
    }
    let matcher = TermMatcher::new(lexicon.iter().map(|(t, &w)| (t.as_str(), w)));
    Ok(relevance_with(&matcher, &word_tokens(text)))
}

fn relevance_with(matcher: &TermMatcher, tokens: &[String]) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    (matcher.weighted_hits(tokens) / tokens.len() as f64).clamp(0.0, 1.0)
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？' | '；' | ';' | '…')
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c as u32, 0x3000..=0x303F | 0xFF00..=0xFF0F | 0xFF1A..=0xFF20 | 0x2010..=0x2027)
}

/// Punctuation errors per sentence, clamped to 1.
///
/// A sentence ends at terminal punctuation or a newline. Each sentence over
/// [`LONG_SENTENCE_CHARS`] chars that does not end in terminal punctuation
/// is one error, and so is every run of [`PUNCT_RUN_LEN`] or more identical
/// punctuation marks.
pub fn punctuation_error_rate(text: &str) -> f64 {
    let mut sentences = 0usize;
    let mut errors = 0usize;
    let mut sentence_len = 0usize;

    let mut run_char = None;
    let mut run_len = 0usize;

    let close = |len: &mut usize, terminated: bool, sentences: &mut usize, errors: &mut usize| {
        if *len > 0 {
            *sentences += 1;
            if !terminated && *len > LONG_SENTENCE_CHARS {
                *errors += 1;
            }
        }
        *len = 0;
    };

    for c in text.chars() {
        if is_punct(c) {
            if run_char == Some(c) {
                run_len += 1;
                if run_len == PUNCT_RUN_LEN {
                    errors += 1;
                }
            } else {
                run_char = Some(c);
                run_len = 1;
            }
        } else {
            run_char = None;
            run_len = 0;
        }

        if is_terminal(c) {
            close(&mut sentence_len, true, &mut sentences, &mut errors);
        } else if c == '\n' {
            close(&mut sentence_len, false, &mut sentences, &mut errors);
        } else if !c.is_whitespace() || sentence_len > 0 {
            sentence_len += 1;
        }
    }
    close(&mut sentence_len, false, &mut sentences, &mut errors);

    if errors == 0 {
        0.0
    } else {
        (errors as f64 / sentences.max(1) as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub doc_id: String,
    pub scores: BTreeMap<String, f64>,
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
}

/// Scorer with term lists compiled once per configuration.
pub struct QualityScorer<'a> {
    cfg: &'a FilterConfig,
    ads: BTreeMap<Language, TermMatcher>,
    ads_any: TermMatcher,
    lexicon: BTreeMap<Language, TermMatcher>,
    lexicon_any: TermMatcher,
}

impl<'a> QualityScorer<'a> {
    pub fn new(cfg: &'a FilterConfig) -> Self {
        let ads = cfg
            .ad_keywords
            .iter()
            .map(|(&l, kws)| (l, TermMatcher::new(kws.iter().map(|k| (k.as_str(), 1.0)))))
            .collect();
        let ads_any = TermMatcher::new(cfg.ad_keywords.values().flatten().map(|k| (k.as_str(), 1.0)));
        let lexicon = cfg
            .domain_lexicon
            .iter()
            .map(|(&l, terms)| (l, TermMatcher::new(terms.iter().map(|(t, &w)| (t.as_str(), w)))))
            .collect();
        let lexicon_any = TermMatcher::new(
            cfg.domain_lexicon
                .values()
                .flat_map(|terms| terms.iter().map(|(t, &w)| (t.as_str(), w))),
        );
        QualityScorer {
            cfg,
            ads,
            ads_any,
            lexicon,
            lexicon_any,
        }
    }

    pub fn config(&self) -> &FilterConfig {
        self.cfg
    }

    fn ads_for(&self, lang: Language) -> &TermMatcher {
        self.ads.get(&lang).unwrap_or(&self.ads_any)
    }

    fn lexicon_for(&self, lang: Language) -> &TermMatcher {
        self.lexicon.get(&lang).unwrap_or(&self.lexicon_any)
    }

    pub fn score(&self, doc: &RawDocument) -> QualityVerdict {
        let cfg = self.cfg;
        let chars = doc.text.chars().count();
        let tokens = word_tokens(&doc.text);

        let punct = punctuation_error_rate(&doc.text);
        let ads = if tokens.is_empty() {
            0.0
        } else {
            (self.ads_for(doc.language).covered_tokens(&tokens) as f64 / tokens.len() as f64).min(1.0)
        };
        let relevance = relevance_with(self.lexicon_for(doc.language), &tokens);

        let scores = BTreeMap::from([
            (REASON_LENGTH.to_string(), chars as f64),
            (REASON_PUNCT.to_string(), punct),
            (REASON_ADS.to_string(), ads),
            (REASON_RELEVANCE.to_string(), relevance),
        ]);

        let reason = if doc.text.trim().is_empty() {
            Some(REASON_EMPTY)
        } else if chars < cfg.min_chars || chars > cfg.max_chars {
            Some(REASON_LENGTH)
        } else if punct > cfg.max_punct_error_rate {
            Some(REASON_PUNCT)
        } else if ads > cfg.max_ad_density {
            Some(REASON_ADS)
        } else if relevance < cfg.min_domain_score {
            Some(REASON_RELEVANCE)
        } else {
            None
        };

        QualityVerdict {
            doc_id: doc.id.clone(),
            scores,
            kept: reason.is_none(),
            reject_reason: reason.map(str::to_string),
        }
    }
}

pub fn score_document(doc: &RawDocument, cfg: &FilterConfig) -> QualityVerdict {
    QualityScorer::new(cfg).score(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub input_count: u64,
    pub kept_count: u64,
    pub selection_rate: f64,
    /// Documents passing every heuristic filter, before quota truncation.
    pub survivor_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quota: Option<u64>,
    pub under_quota: bool,
    pub reject_histogram: BTreeMap<String, u64>,
}

/// `ceil(rate · n)`, robust to the representation error of `rate`
/// (0.014 · 100000 evaluates to 1400.0000000000002 in binary floating point).
pub fn quota_for(rate: f64, n: u64) -> u64 {
    let exact = rate * n as f64;
    let nearest = exact.round();
    if (exact - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as u64
    } else {
        exact.ceil() as u64
    }
}

pub struct Selection {
    /// Kept documents in input order.
    pub kept: Vec<RawDocument>,
    /// One verdict per input document, in input order.
    pub verdicts: Vec<QualityVerdict>,
    pub report: SelectionReport,
}

/// Score every document, then, when a target rate is configured, keep the
/// `ceil(target_rate · input_count)` heuristic survivors with the highest
/// relevance (ties broken by ascending doc id).
pub fn select_corpus<I>(docs: I, cfg: &FilterConfig) -> Selection
where
    I: IntoIterator<Item = RawDocument>,
{
    let docs: Vec<RawDocument> = docs.into_iter().collect();
    let scorer = QualityScorer::new(cfg);
    let verdicts: Vec<QualityVerdict> = docs.par_iter().map(|d| scorer.score(d)).collect();

    let mut histogram: BTreeMap<String, u64> = BTreeMap::new();
    let mut survivors: Vec<usize> = Vec::new();
    for (i, v) in verdicts.iter().enumerate() {
        match &v.reject_reason {
            Some(r) => *histogram.entry(r.clone()).or_default() += 1,
            None => survivors.push(i),
        }
    }
    let survivor_count = survivors.len() as u64;
    let input_count = docs.len() as u64;

    let mut under_quota = false;
    let mut quota = None;
    if let Some(rate) = cfg.target_rate {
        let q = quota_for(rate, input_count);
        quota = Some(q);
        if (survivors.len() as u64) < q {
            under_quota = true;
        } else {
            let relevance = |i: usize| verdicts[i].scores[REASON_RELEVANCE];
            survivors.sort_by(|&a, &b| {
                relevance(b)
                    .total_cmp(&relevance(a))
                    .then_with(|| docs[a].id.cmp(&docs[b].id))
            });
            let cut = survivors.split_off(q as usize);
            if !cut.is_empty() {
                histogram.insert(REASON_RANK_CUTOFF.to_string(), cut.len() as u64);
            }
            survivors.sort_unstable();
        }
    }

    let mut keep = vec![false; docs.len()];
    for &i in &survivors {
        keep[i] = true;
    }
    let kept: Vec<RawDocument> = docs
        .into_iter()
        .zip(keep)
        .filter_map(|(d, k)| k.then_some(d))
        .collect();
    let kept_count = kept.len() as u64;

    Selection {
        kept,
        verdicts,
        report: SelectionReport {
            input_count,
            kept_count,
            selection_rate: if input_count == 0 { 0.0 } else { kept_count as f64 / input_count as f64 },
            survivor_count,
            target_rate: cfg.target_rate,
            quota,
            under_quota,
            reject_histogram: histogram,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceKind;

    fn doc(id: &str, text: &str, language: Language) -> RawDocument {
        RawDocument {
            id: id.into(),
            source_kind: SourceKind::Web,
            language,
            title: None,
            text: text.into(),
            meta: Default::default(),
        }
    }

    #[test]
    fn empty_doc_rejected_as_empty() {
        let v = score_document(&doc("e", "", Language::En), &FilterConfig::default());
        assert!(!v.kept);
        assert_eq!(v.reject_reason.as_deref(), Some(REASON_EMPTY));
        for f in FILTER_ORDER {
            assert!(v.scores.contains_key(f));
        }
    }

    #[test]
    fn short_doc_rejected_for_length() {
        let v = score_document(&doc("s", "patient ok", Language::En), &FilterConfig::default());
        assert_eq!(v.reject_reason.as_deref(), Some(REASON_LENGTH));
        assert_eq!(v.scores[REASON_LENGTH], 10.0);
    }

    #[test]
    fn ad_density_hand_tally() {
        // tokens: buy now cheap pills discount today sale here -> 8 tokens,
        // ad keywords buy, cheap, discount, sale -> 4 hits, density 4/8.
        let cfg = FilterConfig {
            min_chars: 1,
            max_ad_density: 0.3,
            ..FilterConfig::default()
        };
        let v = score_document(&doc("a", "Buy now, cheap pills! Discount today. Sale here.", Language::En), &cfg);
        assert_eq!(v.scores[REASON_ADS], 0.5);
        assert_eq!(v.reject_reason.as_deref(), Some(REASON_ADS));
    }

    #[test]
    fn relevance_edge_cases() {
        let lex = BTreeMap::from([("fever".to_string(), 1.0)]);
        assert_eq!(domain_relevance("nothing to see", &lex).unwrap(), 0.0);
        assert_eq!(domain_relevance("fever fever fever", &lex).unwrap(), 1.0);
        assert_eq!(domain_relevance("", &lex).unwrap(), 0.0);
        let heavy = BTreeMap::from([("fever".to_string(), 5.0)]);
        assert_eq!(domain_relevance("fever and more", &heavy).unwrap(), 1.0);
        assert!(matches!(domain_relevance("x", &BTreeMap::new()), Err(QualityError::EmptyLexicon)));
    }

    #[test]
    fn relevance_counts_multi_char_chinese_terms() {
        let lex = BTreeMap::from([("头痛".to_string(), 1.0)]);
        // 患 者 头 痛 三 天 -> 6 tokens, one hit.
        assert!((domain_relevance("患者头痛三天", &lex).unwrap() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn relevance_is_monotone_in_hits() {
        let lex = BTreeMap::from([("pain".to_string(), 1.0), ("dose".to_string(), 0.5)]);
        let base = "the pain is mild and the rest is filler text here";
        let more = "the pain is mild and the dose is filler text here";
        assert!(domain_relevance(more, &lex).unwrap() > domain_relevance(base, &lex).unwrap());
    }

    #[test]
    fn punctuation_rules() {
        assert_eq!(punctuation_error_rate("Fine. Also fine."), 0.0);
        // two sentences, one triple-bang run
        assert_eq!(punctuation_error_rate("Wow!!! Fine."), 0.5);
        let long = "a".repeat(401);
        assert_eq!(punctuation_error_rate(&long), 1.0);
        let long_ok = format!("{}.", "a".repeat(401));
        assert_eq!(punctuation_error_rate(&long_ok), 0.0);
        assert_eq!(punctuation_error_rate("治疗有效。。。好"), 0.5);
    }

    #[test]
    fn first_failing_filter_wins() {
        let cfg = FilterConfig {
            min_chars: 1,
            ..FilterConfig::default()
        };
        // Both punctuation and ads fail; punctuation comes first.
        let v = score_document(&doc("x", "buy buy buy!!! sale sale", Language::En), &cfg);
        assert_eq!(v.reject_reason.as_deref(), Some(REASON_PUNCT));
        assert!(v.scores[REASON_ADS] > cfg.max_ad_density);
    }

    #[test]
    fn uniform_length_rejection() {
        let docs = (0..20).map(|i| doc(&format!("d{i}"), "short", Language::En));
        let sel = select_corpus(docs, &FilterConfig::default());
        assert_eq!(sel.report.kept_count, 0);
        assert_eq!(sel.report.reject_histogram, BTreeMap::from([(REASON_LENGTH.to_string(), 20)]));
    }

    #[test]
    fn under_quota_keeps_all_survivors() {
        let cfg = FilterConfig {
            min_chars: 1,
            min_domain_score: 0.0,
            target_rate: Some(0.9),
            ..FilterConfig::default()
        };
        let mut docs: Vec<_> = (0..5).map(|i| doc(&format!("ok{i}"), "patient fever.", Language::En)).collect();
        docs.extend((0..5).map(|i| doc(&format!("ad{i}"), "buy sale cheap deal", Language::En)));
        let sel = select_corpus(docs, &cfg);
        assert!(sel.report.under_quota);
        assert_eq!(sel.report.kept_count, 5);
    }

    #[test]
    fn quota_rounding() {
        assert_eq!(quota_for(0.014, 100_000), 1400);
        assert_eq!(quota_for(0.014, 1000), 14);
        assert_eq!(quota_for(0.5, 3), 2);
        assert_eq!(quota_for(0.0, 10), 0);
        assert_eq!(quota_for(1.0, 7), 7);
    }

    #[test]
    fn term_list_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.tsv");
        std::fs::write(&p, "fever\t2.5\n# comment\n\npain\n").unwrap();
        let terms = load_term_list(&p).unwrap();
        assert_eq!(terms["fever"], 2.5);
        assert_eq!(terms["pain"], 1.0);
        std::fs::write(&p, "fever\tlots\n").unwrap();
        assert!(matches!(load_term_list(&p), Err(QualityError::BadWeight { line: 1, .. })));
    }

    #[test]
    fn config_validation_names_fields() {
        let cfg = FilterConfig {
            min_chars: 500,
            max_chars: 100,
            target_rate: Some(1.5),
            ..FilterConfig::default()
        };
        let issues = cfg.validate("filter");
        let fields: Vec<_> = issues.iter().map(|i| i.field.as_str()).collect();
        assert_eq!(fields, ["filter.min_chars", "filter.target_rate"]);
    }
}
