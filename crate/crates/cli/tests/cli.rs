use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn monostage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monostage"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn demo(dir: &Path, docs: usize) -> PathBuf {
    let o = monostage(&["init-demo", dir.to_str().unwrap(), "--docs", &docs.to_string()]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("run.toml")
}

fn run_all(config: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--config", config.to_str().unwrap(), "--mock-rewriter"];
    args.extend(extra);
    args.push("run-all");
    monostage(&args)
}

fn stage_lines(out: &str) -> Vec<(String, String)> {
    out.lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

#[test]
fn second_run_is_up_to_date_and_seed_change_reruns_downstream() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo(tmp.path(), 200);
    let first = run_all(&cfg, &[]);
    assert!(first.status.success(), "{}", stderr(&first));
    let lines = stage_lines(&stdout(&first));
    let names: Vec<_> = lines.iter().map(|l| l.0.as_str()).collect();
    assert_eq!(names, ["ingest", "filter", "dedup", "unify", "compile", "train", "eval"]);
    assert!(lines.iter().all(|l| l.1 != "up to date"));

    let second = run_all(&cfg, &[]);
    assert!(second.status.success());
    assert!(stage_lines(&stdout(&second)).iter().all(|l| l.1 == "up to date"), "{}", stdout(&second));

    let reseeded = run_all(&cfg, &["--seed", "99"]);
    assert!(reseeded.status.success(), "{}", stderr(&reseeded));
    let lines = stage_lines(&stdout(&reseeded));
    let fresh: Vec<_> = lines.iter().filter(|l| l.1 != "up to date").map(|l| l.0.as_str()).collect();
    assert_eq!(fresh, ["compile", "train", "eval"]);
}

#[test]
fn interrupted_stage_is_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo(tmp.path(), 120);
    let c = cfg.to_str().unwrap();
    assert!(monostage(&["--config", c, "ingest"]).status.success());
    assert!(monostage(&["--config", c, "filter"]).status.success());
    fs::write(tmp.path().join("work/filter/.incomplete"), b"").unwrap();
    let again = monostage(&["--config", c, "run", "--stage", "filter"]);
    assert!(again.status.success());
    assert!(!stdout(&again).contains("up to date"), "{}", stdout(&again));
    assert!(!tmp.path().join("work/filter/.incomplete").exists());
    let ingest = monostage(&["--config", c, "ingest"]);
    assert_eq!(stdout(&ingest).trim(), "ingest: up to date");
}

#[test]
fn bad_config_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo(tmp.path(), 16);
    let text = fs::read_to_string(&cfg).unwrap().replace("min_chars = 150", "min_chars = 150\nmax_chars = 100");
    fs::write(&cfg, text).unwrap();
    let o = monostage(&["--config", cfg.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("filter.min_chars"), "{}", stderr(&o));

    let o = monostage(&["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    let o = monostage(&["--config", cfg.to_str().unwrap(), "run", "--stage", "bake"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ingest"));
}

#[test]
fn verify_reports_tampering_with_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo(tmp.path(), 120);
    let c = cfg.to_str().unwrap();
    for stage in ["ingest", "filter", "dedup", "unify", "compile"] {
        let o = monostage(&["--config", c, "--mock-rewriter", stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let ok = monostage(&["--config", c, "--mock-rewriter", "verify"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert_eq!(stdout(&ok).trim(), "verify: ok");

    let shard = tmp.path().join("work/compile/shard-00000.jsonl");
    let mut bytes = fs::read(&shard).unwrap();
    bytes.extend_from_slice(b"{}\n");
    fs::write(&shard, bytes).unwrap();
    let bad = monostage(&["--config", c, "verify"]);
    assert_eq!(bad.status.code(), Some(4));
    assert!(stdout(&bad).contains("shard-00000.jsonl"));
}

#[test]
fn stats_prints_the_table() {
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/corpus_stats.json");
    let o = monostage(&["stats", fixture]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.lines().last().unwrap().trim_end().ends_with("5203973"), "{out}");
    assert!(out.contains("1835931"));
}
