mod common;

use std::collections::{BTreeMap, HashMap};

use common::rng;
use monostage_core::eval::{
    aggregate_pairwise, extract_answer, format_mcq_prompt, score_benchmark, EvalError, ExamItem, JudgeRecord,
    PairwiseTally, Verdict,
};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;

const LABELS: [char; 4] = ['A', 'B', 'C', 'D'];

fn item(id: &str, bench: &str, gold: char) -> ExamItem {
    ExamItem {
        item_id: id.into(),
        benchmark: bench.into(),
        question: "Which drug is first-line for hypertension?".into(),
        options: BTreeMap::from([
            ("A".into(), "amlodipine".into()),
            ("B".into(), "metformin".into()),
            ("C".into(), "amoxicillin".into()),
            ("D".into(), "salbutamol".into()),
        ]),
        gold_label: gold.to_string(),
    }
}

const MESSY: [&str; 25] = [
    "{g}",
    "{g}.",
    "({g})",
    "Answer: {g}",
    "The answer is {g}.",
    "the correct answer is option {g}",
    "答案是{g}",
    "答案：{g}。",
    "**{g}**",
    "{g}. metformin",
    "I believe the answer is {g} because it lowers blood pressure.",
    "  {g}  \n",
    "Option {g} is correct.",
    "{g}) amlodipine",
    "Final answer: ({g})",
    "正确答案为{g}。",
    "选项{g}正确",
    "My choice: {g}",
    "{g}\nExplanation: the drug is first-line therapy.",
    "The best option here is {g}, since the others are antibiotics.",
    "[{g}]",
    "{g}: salbutamol",
    "answer is {l}",
    "It must be {g}!",
    "→ {g}",
];

#[test]
fn messy_outputs_mostly_parse() {
    let mut right = 0;
    let mut misses = Vec::new();
    for g in ['B', 'D'] {
        for t in MESSY {
            let text = t.replace("{g}", &g.to_string()).replace("{l}", &g.to_ascii_lowercase().to_string());
            if extract_answer(&text, &LABELS) == Some(g) {
                right += 1;
            } else {
                misses.push(text);
            }
        }
    }
    assert!(right >= 48, "{right}/50, missed {misses:?}");
}

#[test]
fn ambiguity_and_absence_give_none() {
    assert_eq!(extract_answer("Either A or C could be right.", &LABELS), None);
    assert_eq!(extract_answer("I do not know.", &LABELS), None);
    assert_eq!(extract_answer("", &LABELS), None);
    assert_eq!(extract_answer("E", &LABELS), None);
    assert_eq!(extract_answer("B", &['A', 'B']), Some('B'));
}

#[test]
fn prompt_lists_every_option_in_order() {
    let p = format_mcq_prompt(&item("q", "b", 'A'));
    let lines: Vec<&str> = p.lines().collect();
    assert_eq!(lines[1], "A. amlodipine");
    assert_eq!(lines[4], "D. salbutamol");
    assert!(p.ends_with("Answer:"));
}

#[test]
fn malformed_items_are_rejected() {
    let mut bad = item("x", "b", 'A');
    bad.gold_label = "E".into();
    assert!(matches!(bad.validate(), Err(EvalError::GoldNotInOptions { .. })));
    bad.options.retain(|k, _| k == "A");
    assert_eq!(bad.validate(), Err(EvalError::TooFewOptions("x".into())));
    assert!(item("ok", "b", 'C').validate().is_ok());
}

#[derive(Default, Debug, PartialEq)]
struct Counts {
    total: u64,
    correct: u64,
    answered: u64,
    unparseable: u64,
}

#[test]
fn five_hundred_items_match_a_count_oracle() {
    let mut r = rng(71);
    let benches = ["exam_a", "exam_b", "exam_c"];
    let clean = ["{x}", "Answer: {x}", "The answer is {x}.", "答案是{x}", "({x})"];
    let mut items = Vec::new();
    let mut outputs = HashMap::new();
    let mut oracle: BTreeMap<&str, Counts> = BTreeMap::new();
    for i in 0..500 {
        let bench = *benches.choose(&mut r).unwrap();
        let gold = *LABELS.choose(&mut r).unwrap();
        let id = format!("item{i:03}");
        items.push(item(&id, bench, gold));
        let c = oracle.entry(bench).or_default();
        c.total += 1;
        let roll: f64 = r.random();
        if roll < 0.03 {
            c.unparseable += 1;
            continue;
        }
        if roll < 0.08 {
            outputs.insert(id, "I cannot tell from the options given.".to_string());
            c.unparseable += 1;
            continue;
        }
        let pick = if r.random_bool(0.6) { gold } else { *LABELS.choose(&mut r).unwrap() };
        let text = clean.choose(&mut r).unwrap().replace("{x}", &pick.to_string());
        outputs.insert(id, text);
        c.answered += 1;
        c.correct += u64::from(pick == gold);
    }

    let report = score_benchmark(&items, &outputs);
    assert_eq!(report.rows.len(), 3);
    for row in &report.rows {
        let want = &oracle[row.benchmark.as_str()];
        let got = Counts {
            total: row.total,
            correct: row.correct,
            answered: row.answered,
            unparseable: row.unparseable,
        };
        assert_eq!(&got, want, "{}", row.benchmark);
        assert_eq!(row.accuracy, want.correct as f64 / want.total as f64);
    }
    let mean = oracle.values().map(|c| c.correct as f64 / c.total as f64).sum::<f64>() / 3.0;
    assert!((report.average - mean).abs() < 1e-15);
    let missing = items.iter().filter(|it| !outputs.contains_key(&it.item_id)).count();
    assert_eq!(report.missing_outputs.len(), missing);
    assert!(report.to_table().lines().last().unwrap().starts_with("average"));
}

fn judgments(win: usize, tie: usize, fail: usize) -> Vec<JudgeRecord> {
    let verdicts = std::iter::repeat_n(Verdict::Win, win)
        .chain(std::iter::repeat_n(Verdict::Tie, tie))
        .chain(std::iter::repeat_n(Verdict::Fail, fail));
    verdicts
        .enumerate()
        .map(|(i, verdict)| JudgeRecord {
            question_id: format!("q{i:03}"),
            verdict,
        })
        .collect()
}

#[test]
fn pairwise_tally_of_a_hundred_verdicts() {
    let t = aggregate_pairwise(&judgments(82, 13, 5));
    assert_eq!((t.win, t.tie, t.fail), (82, 13, 5));
    assert_eq!(t.percentages(), (82.0, 13.0, 5.0));
    assert_eq!(aggregate_pairwise(&[]), PairwiseTally::default());
    assert_eq!(PairwiseTally::default().percentages(), (0.0, 0.0, 0.0));
}

#[test]
fn judge_records_read_from_json() {
    let line = r#"{"question_id":"q1","verdict":"tie"}"#;
    let rec: JudgeRecord = serde_json::from_str(line).unwrap();
    assert_eq!(rec.verdict, Verdict::Tie);
}

proptest! {
    #[test]
    fn tally_counts_sum_to_records(win in 0usize..50, tie in 0usize..50, fail in 0usize..50) {
        let t = aggregate_pairwise(&judgments(win, tie, fail));
        prop_assert_eq!((t.win, t.tie, t.fail), (win as u64, tie as u64, fail as u64));
        if t.total() > 0 {
            let (a, b, c) = t.percentages();
            prop_assert!((a + b + c - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn a_lone_label_is_always_found(g in prop::sample::select(LABELS.to_vec()), pad in "[ .,:!?()\\n]{0,6}") {
        let text = format!("{pad}{g}{pad}");
        prop_assert_eq!(extract_answer(&text, &LABELS), Some(g));
    }
}
