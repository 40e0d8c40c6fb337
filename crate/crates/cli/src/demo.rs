//! Deterministic bilingual demo corpus for smoke runs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const SEED: u64 = 20240101;

struct Lexicon {
    diseases: &'static [&'static str],
    symptoms: &'static [&'static str],
    drugs: &'static [&'static str],
    sentences: &'static [&'static str],
    off_topic: &'static [&'static str],
    ads: &'static [&'static str],
    titles: &'static [&'static str],
    question: &'static str,
    answer: &'static str,
    exam: &'static str,
}

const EN: Lexicon = Lexicon {
    diseases: &["hypertension", "diabetes", "pneumonia", "asthma", "migraine", "gastritis", "hepatitis", "arthritis"],
    symptoms: &["fever", "headache", "chest pain", "fatigue", "cough", "nausea", "dizziness", "shortness of breath"],
    drugs: &["amlodipine", "metformin", "amoxicillin", "salbutamol", "sumatriptan", "omeprazole", "entecavir", "ibuprofen"],
    sentences: &[
        "Patients with {d} often present with {s1} and {s2}.",
        "The diagnosis of {d} relies on clinical history, physical examination and blood tests.",
        "First-line treatment for {d} usually includes {drug} at a dose adjusted to the patient.",
        "Chronic {d} increases the risk of heart disease and should be monitored in hospital clinics.",
        "A physician should reassess the patient if {s1} persists for more than three days.",
        "Acute infection may cause {s1}, and therapy with {drug} is sometimes required.",
        "Lifestyle changes such as diet and exercise support medical therapy for {d}.",
        "Blood pressure and symptoms should be recorded at every follow-up visit.",
    ],
    off_topic: &[
        "The football team trained on the field before the evening match.",
        "Fresh snow covered the mountain road and the village closed its school.",
        "The orchestra rehearsed the new symphony for the spring festival.",
        "Traders watched the markets closely as the quarterly reports arrived.",
        "The museum opened a new gallery of paintings from the last century.",
    ],
    ads: &[
        "Buy now and save with this discount sale offer.",
        "Click to subscribe for free deals and coupon codes.",
        "Cheap offer, buy today, free coupon with every deal.",
    ],
    titles: &["Clinical notes on {d}", "Managing {d}", "{d}: symptoms and treatment"],
    question: "What are common symptoms of {d}?",
    answer: "Common symptoms of {d} include {s1} and {s2}. Patients should see a physician if they persist.",
    exam: "Which drug is commonly used to treat {d}?",
};

const ZH: Lexicon = Lexicon {
    diseases: &["高血压", "糖尿病", "肺炎", "哮喘", "偏头痛", "胃炎", "肝炎", "关节炎"],
    symptoms: &["发热", "头痛", "胸痛", "乏力", "咳嗽", "恶心", "头晕", "呼吸困难"],
    drugs: &["氨氯地平", "二甲双胍", "阿莫西林", "沙丁胺醇", "舒马普坦", "奥美拉唑", "恩替卡韦", "布洛芬"],
    sentences: &[
        "{d}患者常出现{s1}和{s2}等症状。",
        "{d}的诊断需要结合临床病史、体格检查和血液检查。",
        "治疗{d}时，医生通常会根据患者情况调整{drug}的剂量。",
        "慢性{d}会增加心脏疾病的风险，患者应定期到医院复查。",
        "如果{s1}持续超过三天，患者应及时就医。",
        "急性感染可能引起{s1}，部分患者需要使用{drug}治疗。",
        "合理饮食和规律运动有助于{d}的临床治疗。",
        "每次随访时都应记录患者的血压和症状变化。",
    ],
    off_topic: &[
        "今天的天气很好，我们一起去公园散步。",
        "这支足球队在比赛前进行了长时间的训练。",
        "城市图书馆新开放了一个儿童阅读区。",
        "周末的音乐会吸引了很多年轻的观众。",
        "山上的雪很厚，村里的学校暂时关闭。",
    ],
    ads: &["点击购买，特价优惠，全场包邮！", "折扣促销，代购优惠，点击购买！", "特价包邮，优惠折扣，马上购买！"],
    titles: &["{d}的临床笔记", "{d}的管理", "{d}：症状与治疗"],
    question: "{d}有哪些常见症状？",
    answer: "{d}的常见症状包括{s1}和{s2}。症状持续时，患者应及时就医。",
    exam: "以下哪种药物常用于治疗{d}？",
};

fn fill(template: &str, lex: &Lexicon, d: usize, rng: &mut ChaCha8Rng) -> String {
    let s1 = lex.symptoms.choose(rng).unwrap();
    let s2 = lex.symptoms.choose(rng).unwrap();
    template
        .replace("{d}", lex.diseases[d])
        .replace("{s1}", s1)
        .replace("{s2}", s2)
        .replace("{drug}", lex.drugs[d])
}

fn join(lang: &str, sentences: &[String]) -> String {
    sentences.join(if lang == "en" { " " } else { "" })
}

fn medical_body(lex: &Lexicon, d: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..n)
        .map(|_| {
            let t = lex.sentences.choose(rng).unwrap();
            fill(t, lex, d, rng)
        })
        .collect()
}

/// One document per call; the mix of clean, noisy and duplicated records is
/// what the filter and dedup stages are expected to sort out.
fn document(lang: &str, lex: &Lexicon, id: &str, earlier: &[(String, String)], rng: &mut ChaCha8Rng) -> serde_json::Value {
    let d = rng.random_range(0..lex.diseases.len());
    let n = if lang == "en" { rng.random_range(5..=8) } else { rng.random_range(10..=14) };
    let title = fill(lex.titles.choose(rng).unwrap(), lex, d, rng);
    let roll: f64 = rng.random();
    let text = if roll < 0.05 && !earlier.is_empty() {
        earlier.choose(rng).unwrap().1.clone()
    } else if roll < 0.12 && !earlier.is_empty() {
        let base = &earlier.choose(rng).unwrap().1;
        let extra = fill(lex.sentences.choose(rng).unwrap(), lex, d, rng);
        format!("{base}{}{extra}", if lang == "en" { " " } else { "" })
    } else if roll < 0.22 {
        let mut body = medical_body(lex, d, 2, rng);
        for _ in 0..4 {
            body.push(lex.ads.choose(rng).unwrap().to_string());
        }
        body.shuffle(rng);
        join(lang, &body)
    } else if roll < 0.32 {
        let body: Vec<String> = (0..n).map(|_| lex.off_topic.choose(rng).unwrap().to_string()).collect();
        join(lang, &body)
    } else if roll < 0.40 {
        join(lang, &medical_body(lex, d, 1, rng))
    } else {
        let body = medical_body(lex, d, n, rng);
        let split = body.len() / 2;
        format!("{}\n\n{}", join(lang, &body[..split]), join(lang, &body[split..]))
    };
    json!({ "id": id, "title": title, "text": text })
}

fn write_lines(path: &Path, lines: &[serde_json::Value]) -> io::Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l).map_err(io::Error::other)?);
        out.push('\n');
    }
    fs::write(path, out)
}

/// Write the demo under `dir` and return the config path.
pub fn write_demo(dir: &Path, total_docs: usize) -> io::Result<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let corpus = dir.join("corpus");
    fs::create_dir_all(&corpus)?;
    fs::create_dir_all(dir.join("sft"))?;
    fs::create_dir_all(dir.join("exam"))?;

    let kinds = ["web", "book", "encyclopedia", "literature"];
    let per_file = (total_docs / 8).max(1);
    let mut inputs = String::new();
    for (lang, lex) in [("zh", &ZH), ("en", &EN)] {
        let mut earlier: Vec<(String, String)> = Vec::new();
        for kind in kinds {
            let name = format!("{kind}_{lang}.jsonl");
            let docs: Vec<serde_json::Value> = (0..per_file)
                .map(|i| {
                    let id = format!("{kind}-{lang}-{i:04}");
                    let doc = document(lang, lex, &id, &earlier, &mut rng);
                    if earlier.len() < 64 {
                        earlier.push((id, doc["text"].as_str().unwrap_or_default().to_string()));
                    }
                    doc
                })
                .collect();
            write_lines(&corpus.join(&name), &docs)?;
            inputs.push_str(&format!(
                "\n[[inputs]]\npath = \"corpus/{name}\"\nsource_kind = \"{kind}\"\nlanguage = \"{lang}\"\n"
            ));
        }
    }

    let mut pairs = Vec::new();
    for i in 0..200 {
        let (lang, lex) = if i % 10 < 7 { ("en", &EN) } else { ("zh", &ZH) };
        let d = rng.random_range(0..lex.diseases.len());
        let mut output = fill(lex.answer, lex, d, &mut rng);
        if i == 13 {
            output.push_str(" Call 13812345678 for a private consultation.");
        }
        pairs.push(json!({
            "pair_id": format!("sft-{i:04}"),
            "instruction": fill(lex.question, lex, d, &mut rng),
            "output": output,
            "language": lang,
            "genre": "consultation",
        }));
    }
    write_lines(&dir.join("sft").join("pairs.jsonl"), &pairs)?;

    let mut items = Vec::new();
    for (bench, lex) in [("demo_exam_zh", &ZH), ("demo_exam_en", &EN)] {
        for i in 0..40 {
            let d = i % lex.diseases.len();
            let mut distractors: Vec<usize> = (0..lex.drugs.len()).filter(|&j| j != d).collect();
            distractors.shuffle(&mut rng);
            let mut choices = vec![d, distractors[0], distractors[1], distractors[2]];
            choices.shuffle(&mut rng);
            let labels = ["A", "B", "C", "D"];
            let options: BTreeMap<&str, &str> = labels.iter().zip(&choices).map(|(l, &c)| (*l, lex.drugs[c])).collect();
            let gold = labels[choices.iter().position(|&c| c == d).unwrap()];
            items.push(json!({
                "item_id": format!("{bench}-{i:03}"),
                "benchmark": bench,
                "question": lex.exam.replace("{d}", lex.diseases[d]),
                "options": options,
                "gold": gold,
            }));
        }
    }
    write_lines(&dir.join("exam").join("exam.jsonl"), &items)?;

    let config = format!(
        r#"target_language = "zh"

[paths]
workdir = "work"
{inputs}
[sft]
paths = ["sft/pairs.jsonl"]

[filter]
min_chars = 150
target_rate = 0.3

[dedup]
num_perms = 128
shingle_size = 5
bands = 32
rows = 4
threshold = 0.8

[unify]
max_chunk_chars = 400
pairs_per_chunk = 1

[rewriter]
model_id = "demo-rewriter"

[mix]
seed = 7
shard_size = 200

[train]
mode = "one_stage"
learning_rate = 0.1
batch_size = 8
total_steps = 150
seed = 7
window = 8
embed = 16
hidden = 32
max_seq_len = 160

[eval]
exam = "exam/exam.jsonl"
"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, config)?;
    Ok(path)
}
