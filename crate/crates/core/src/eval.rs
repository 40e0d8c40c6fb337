//! Multiple-choice benchmark scoring and pairwise verdict tallies.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("item {0} has fewer than two options")]
    TooFewOptions(String),
    #[error("item {item}: gold label {gold} is not among the options")]
    GoldNotInOptions { item: String, gold: String },
    #[error("item {item}: option label `{label}` is not a single letter A-E")]
    BadLabel { item: String, label: String },
}

/// One exam question. Field names follow the exam file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamItem {
    pub item_id: String,
    pub benchmark: String,
    pub question: String,
    pub options: BTreeMap<String, String>,
    #[serde(rename = "gold")]
    pub gold_label: String,
}

impl ExamItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.options.len() < 2 {
            return Err(EvalError::TooFewOptions(self.item_id.clone()));
        }
        for label in self.options.keys() {
            if !matches!(label.as_str(), "A" | "B" | "C" | "D" | "E") {
                return Err(EvalError::BadLabel {
                    item: self.item_id.clone(),
                    label: label.clone(),
                });
            }
        }
        if !self.options.contains_key(&self.gold_label) {
            return Err(EvalError::GoldNotInOptions {
                item: self.item_id.clone(),
                gold: self.gold_label.clone(),
            });
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<char> {
        self.options.keys().filter_map(|k| k.chars().next()).collect()
    }
}

/// One line of the model outputs file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub item_id: String,
    pub output: String,
}

/// Question, one `X. text` line per option in label order, then the request line.
pub fn format_mcq_prompt(item: &ExamItem) -> String {
    let mut prompt = String::new();
    prompt.push_str(item.question.trim());
    prompt.push('\n');
    for (label, text) in &item.options {
        let _ = writeln!(prompt, "{label}. {}", text.trim());
    }
    let labels: Vec<&str> = item.options.keys().map(String::as_str).collect();
    let _ = write!(prompt, "Answer with the letter of the correct option ({}).\nAnswer:", labels.join("/"));
    prompt
}

fn answer_phrase() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)(?:answer\s*(?:is|:)\s*(?:option\s*)?\(?\s*([A-Za-z])\b|答案\s*(?:是|为|：|:)\s*[（(]?\s*([A-Za-z]))")
            .expect("answer pattern compiles")
    })
}

fn line_start() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*(?:\(([A-Z])\)|([A-Z])[.．])").expect("line-start pattern compiles"))
}

fn unique(found: impl IntoIterator<Item = char>) -> Option<Option<char>> {
    let mut seen: Option<char> = None;
    for c in found {
        match seen {
            None => seen = Some(c),
            Some(s) if s == c => {}
            Some(_) => return Some(None),
        }
    }
    seen.map(Some)
}

/// Map free text to one of `labels`.
///
/// Rules are tried in order: (1) a label letter standing alone, not
/// touching other letters or digits; (2) "answer is X" / "答案是X"
/// phrasing; (3) "(X)" or "X." at the start of a line. The first rule that
/// finds anything decides: one distinct label is the answer, several mean
/// the output is ambiguous and yields `None`.
pub fn extract_answer(model_output: &str, labels: &[char]) -> Option<char> {
    let is_label = |c: char| labels.contains(&c);

    let chars: Vec<char> = model_output.chars().collect();
    let standalone = (0..chars.len()).filter_map(|i| {
        let c = chars[i];
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        let isolated = |n: Option<char>| n.is_none_or(|n| !n.is_alphanumeric());
        (is_label(c) && isolated(before) && isolated(after)).then_some(c)
    });
    if let Some(found) = unique(standalone) {
        return found;
    }

    let phrased = answer_phrase().captures_iter(model_output).filter_map(|cap| {
        let c = cap.get(1).or(cap.get(2))?.as_str().chars().next()?.to_ascii_uppercase();
        is_label(c).then_some(c)
    });
    if let Some(found) = unique(phrased) {
        return found;
    }

    let leading = line_start().captures_iter(model_output).filter_map(|cap| {
        let c = cap.get(1).or(cap.get(2))?.as_str().chars().next()?;
        is_label(c).then_some(c)
    });
    unique(leading).flatten()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub benchmark: String,
    pub total: u64,
    pub correct: u64,
    pub answered: u64,
    pub unparseable: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Sorted by benchmark name.
    pub rows: Vec<BenchmarkRow>,
    /// Mean of the per-benchmark accuracies.
    pub average: f64,
    /// Items that had no entry in the outputs file (scored as unparseable).
    pub missing_outputs: Vec<String>,
}

impl BenchmarkReport {
    pub fn row(&self, benchmark: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.benchmark == benchmark)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.benchmark.len()).max().unwrap_or(0).max("benchmark".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>8}  {:>11}  {:>8}",
            "benchmark", "total", "correct", "answered", "unparseable", "accuracy"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>7}  {:>8}  {:>11}  {:>8.2}",
                r.benchmark,
                r.total,
                r.correct,
                r.answered,
                r.unparseable,
                r.accuracy * 100.0
            );
        }
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {:>8}  {:>11}  {:>8.2}", "average", "", "", "", "", self.average * 100.0);
        out
    }
}

/// Score each item's output. Unparseable and missing outputs count as wrong.
pub fn score_benchmark(items: &[ExamItem], outputs: &HashMap<String, String>) -> BenchmarkReport {
    let mut rows: BTreeMap<&str, BenchmarkRow> = BTreeMap::new();
    let mut missing = Vec::new();
    for item in items {
        let row = rows.entry(item.benchmark.as_str()).or_insert_with(|| BenchmarkRow {
            benchmark: item.benchmark.clone(),
            ..Default::default()
        });
        row.total += 1;
        let Some(output) = outputs.get(&item.item_id) else {
            missing.push(item.item_id.clone());
            row.unparseable += 1;
            continue;
        };
        match extract_answer(output, &item.labels()) {
            Some(label) => {
                row.answered += 1;
                if item.gold_label.starts_with(label) && item.gold_label.len() == 1 {
                    row.correct += 1;
                }
            }
            None => row.unparseable += 1,
        }
    }
    let rows: Vec<BenchmarkRow> = rows
        .into_values()
        .map(|mut r| {
            r.accuracy = if r.total == 0 { 0.0 } else { r.correct as f64 / r.total as f64 };
            r
        })
        .collect();
    let average = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len() as f64
    };
    missing.sort();
    BenchmarkReport {
        rows,
        average,
        missing_outputs: missing,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Win,
    Tie,
    Fail,
}

/// A judge's verdict on one question, from the candidate model's side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub question_id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseTally {
    pub win: u64,
    pub tie: u64,
    pub fail: u64,
}

impl PairwiseTally {
    pub fn total(&self) -> u64 {
        self.win + self.tie + self.fail
    }

    /// (win, tie, fail) as percentages of the total; zeros when empty.
    pub fn percentages(&self) -> (f64, f64, f64) {
        let t = self.total();
        if t == 0 {
            return (0.0, 0.0, 0.0);
        }
        let pct = |n: u64| 100.0 * n as f64 / t as f64;
        (pct(self.win), pct(self.tie), pct(self.fail))
    }
}

pub fn aggregate_pairwise(records: &[JudgeRecord]) -> PairwiseTally {
    records.iter().fold(PairwiseTally::default(), |mut t, r| {
        match r.verdict {
            Verdict::Win => t.win += 1,
            Verdict::Tie => t.tie += 1,
            Verdict::Fail => t.fail += 1,
        }
        t
    })
}
