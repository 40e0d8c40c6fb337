use std::collections::BTreeMap;
use std::fs;

use monostage_core::compiler::{compile, interleave, read_shards, verify_manifest, CompileError, MANIFEST_FILE};
use monostage_core::corpus::Language;
use monostage_core::{DatasetManifest, InstructionPair, MixSpec, Provenance};
use proptest::prelude::*;

fn pairs(n: usize, provenance: Provenance, language: Language) -> Vec<InstructionPair> {
    let tag = match provenance {
        Provenance::TransformedPretrain => "t",
        Provenance::NativeSft => "n",
    };
    (0..n)
        .map(|i| InstructionPair {
            pair_id: format!("{tag}{i:04}"),
            origin_doc_ids: vec![format!("doc{i}")],
            instruction: format!("question {i}"),
            output: format!("answer {i}"),
            language,
            genre: if i % 3 == 0 { "book".into() } else { "web".into() },
            provenance,
        })
        .collect()
}

fn eighty_twenty() -> Vec<InstructionPair> {
    let mut all = pairs(80, Provenance::TransformedPretrain, Language::Zh);
    all.extend(pairs(20, Provenance::NativeSft, Language::Zh));
    all
}

fn spec(seed: u64) -> MixSpec {
    MixSpec {
        seed,
        shard_size: 30,
        ..MixSpec::default()
    }
}

#[test]
fn replay_is_byte_identical_and_verifies() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = compile(eighty_twenty(), &spec(42), a.path()).unwrap();
    let mb = compile(eighty_twenty(), &spec(42), b.path()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(ma.total, 100);
    assert_eq!(ma.shards.len(), 4);
    assert_eq!(ma.shards.iter().map(|s| s.count).collect::<Vec<_>>(), [30, 30, 30, 10]);
    for s in &ma.shards {
        assert_eq!(fs::read(a.path().join(&s.file)).unwrap(), fs::read(b.path().join(&s.file)).unwrap());
    }
    assert_eq!(
        fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
        fs::read(b.path().join(MANIFEST_FILE)).unwrap()
    );
    let loaded = DatasetManifest::load(&a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, ma);
    assert!(verify_manifest(&loaded, a.path(), &spec(42)).is_ok());

    let by_class = |p: Provenance| ma.cells.iter().filter(|c| c.provenance == p).map(|c| c.count).sum::<u64>();
    assert_eq!(by_class(Provenance::TransformedPretrain), 80);
    assert_eq!(by_class(Provenance::NativeSft), 20);
    let back = read_shards(&ma, a.path()).unwrap();
    let mut ids: Vec<_> = back.iter().map(|p| p.pair_id.clone()).collect();
    ids.sort();
    let mut want: Vec<_> = eighty_twenty().into_iter().map(|p| p.pair_id).collect();
    want.sort();
    assert_eq!(ids, want);
}

#[test]
fn another_seed_reorders_and_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let m = compile(eighty_twenty(), &spec(42), dir.path()).unwrap();
    let report = verify_manifest(&m, dir.path(), &spec(43));
    assert!(!report.is_ok());
    assert!(report.problems[0].contains("config hash"));

    let other = tempfile::tempdir().unwrap();
    let m2 = compile(eighty_twenty(), &spec(43), other.path()).unwrap();
    assert_ne!(m.shards[0].sha256, m2.shards[0].sha256);
}

#[test]
fn tampered_or_missing_shards_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let m = compile(eighty_twenty(), &spec(1), dir.path()).unwrap();
    let first = dir.path().join(&m.shards[0].file);
    let mut text = fs::read_to_string(&first).unwrap();
    text = text.replacen("answer", "ANSWER", 1);
    fs::write(&first, text).unwrap();
    fs::remove_file(dir.path().join(&m.shards[3].file)).unwrap();
    let report = verify_manifest(&m, dir.path(), &spec(1));
    assert_eq!(report.problems.len(), 2, "{:?}", report.problems);
    assert!(report.problems[0].contains("content hash"));
    assert!(report.problems[1].contains("missing"));
}

#[test]
fn dropped_line_is_a_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let m = compile(eighty_twenty(), &spec(1), dir.path()).unwrap();
    let path = dir.path().join(&m.shards[1].file);
    let text = fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().skip(1).collect();
    fs::write(&path, kept.join("\n") + "\n").unwrap();
    let report = verify_manifest(&m, dir.path(), &spec(1));
    assert!(report.problems.iter().any(|p| p.contains("count mismatch")));
}

#[test]
fn mixed_languages_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut all = pairs(5, Provenance::NativeSft, Language::Zh);
    all.extend(pairs(5, Provenance::TransformedPretrain, Language::En));
    match compile(all, &spec(0), dir.path()) {
        Err(CompileError::MixedLanguages(l)) => assert_eq!(l, [Language::Zh, Language::En]),
        other => panic!("expected MixedLanguages, got {other:?}"),
    }
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none(), "nothing written");
}

#[test]
fn zero_weight_class_is_excluded_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let s = MixSpec {
        weights: BTreeMap::from([(Provenance::TransformedPretrain, 1.0), (Provenance::NativeSft, 0.0)]),
        ..spec(0)
    };
    let m = compile(eighty_twenty(), &s, dir.path()).unwrap();
    assert_eq!(m.total, 80);
    assert_eq!(m.excluded, BTreeMap::from([(Provenance::NativeSft, 20)]));
    assert!(matches!(
        compile(pairs(3, Provenance::NativeSft, Language::Zh), &s, dir.path()),
        Err(CompileError::EmptyInput)
    ));
}

#[test]
fn weights_shape_the_prefix() {
    let mut classes = BTreeMap::new();
    classes.insert(Provenance::TransformedPretrain, (0..4000).map(|i| (0u8, i)).collect::<Vec<_>>());
    classes.insert(Provenance::NativeSft, (0..4000).map(|i| (1u8, i)).collect());
    let s = MixSpec {
        weights: BTreeMap::from([(Provenance::TransformedPretrain, 4.0), (Provenance::NativeSft, 1.0)]),
        seed: 9,
        shard_size: 1,
    };
    let out = interleave(classes, &s);
    let head = &out.items[..1000];
    let transformed = head.iter().filter(|x| x.0 == 0).count();
    // binomial(1000, 0.8): sd ≈ 12.6
    assert!((750..=850).contains(&transformed), "{transformed}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_positive_weight_item_is_emitted_once(
        n_t in 0usize..60,
        n_n in 0usize..60,
        w_t in 0.0f64..3.0,
        w_n in 0.1f64..3.0,
        seed in 0u64..500,
    ) {
        let mut classes = BTreeMap::new();
        classes.insert(Provenance::TransformedPretrain, (0..n_t).map(|i| (0u8, i)).collect::<Vec<_>>());
        classes.insert(Provenance::NativeSft, (0..n_n).map(|i| (1u8, i)).collect());
        let s = MixSpec {
            weights: BTreeMap::from([(Provenance::TransformedPretrain, w_t), (Provenance::NativeSft, w_n)]),
            seed,
            shard_size: 7,
        };
        let out = interleave(classes.clone(), &s);
        let expect_t = if w_t > 0.0 { n_t } else { 0 };
        prop_assert_eq!(out.items.len(), expect_t + n_n);
        let mut sorted = out.items.clone();
        sorted.sort();
        let mut want: Vec<_> = (0..expect_t).map(|i| (0u8, i)).chain((0..n_n).map(|i| (1u8, i))).collect();
        want.sort();
        prop_assert_eq!(sorted, want);
        prop_assert_eq!(interleave(classes, &s).items, out.items);
    }

    #[test]
    fn manifest_totals_agree(n_t in 1usize..40, n_n in 0usize..40, shard in 1usize..25, seed in 0u64..100) {
        let dir = tempfile::tempdir().unwrap();
        let mut all = pairs(n_t, Provenance::TransformedPretrain, Language::En);
        all.extend(pairs(n_n, Provenance::NativeSft, Language::En));
        let s = MixSpec { seed, shard_size: shard, ..MixSpec::default() };
        let m = compile(all, &s, dir.path()).unwrap();
        prop_assert!(m.is_consistent());
        prop_assert_eq!(m.total as usize, n_t + n_n);
        prop_assert_eq!(m.shards.len(), (n_t + n_n).div_ceil(shard));
        prop_assert!(verify_manifest(&m, dir.path(), &s).is_ok());
    }
}
