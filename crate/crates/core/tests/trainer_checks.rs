mod common;

use common::rng;
use monostage_core::trainer::synthetic::{BoundaryExperiment, ShiftedCorpus, PAD, VOCAB};
use monostage_core::trainer::{
    boundary_jump, finite_diff_check, numeric_gradient, train, LossTrace, ModelShape, ToyModel, TrainConfig, TrainData,
    TrainError, TrainMode,
};
use monostage_core::unify::TokenizedExample;
use proptest::prelude::*;
use rand::Rng;

fn ex(tokens: Vec<u32>, mask: Vec<bool>) -> TokenizedExample {
    TokenizedExample {
        token_ids: tokens,
        loss_mask: mask,
        pair_id: "x".into(),
    }
}

/// Straight-line forward pass written against the documented parameter layout.
fn oracle_loss(m: &ToyModel, batch: &[TokenizedExample]) -> f64 {
    let s = m.shape;
    let p = &m.params;
    let cw = s.window * s.embed;
    let mut total = 0.0;
    let mut n = 0;
    for e in batch {
        for pos in 0..e.token_ids.len() {
            if !e.loss_mask[pos] {
                continue;
            }
            let mut x = Vec::new();
            for k in 0..s.window {
                let tok = if pos + k >= s.window { e.token_ids[pos + k - s.window] } else { s.pad_id } as usize;
                x.extend_from_slice(&p.embedding[tok * s.embed..(tok + 1) * s.embed]);
            }
            let z: Vec<f64> = (0..s.hidden)
                .map(|j| (p.b1[j] + (0..cw).map(|i| p.w1[j * cw + i] * x[i]).sum::<f64>()).tanh())
                .collect();
            let logits: Vec<f64> = (0..s.vocab)
                .map(|v| p.b2[v] + (0..s.hidden).map(|j| p.w2[v * s.hidden + j] * z[j]).sum::<f64>())
                .collect();
            let denom: f64 = logits.iter().map(|l| l.exp()).sum();
            total += -(logits[e.token_ids[pos] as usize].exp() / denom).ln();
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn loss_matches_a_hand_written_forward_pass() {
    let m = ToyModel::init(ModelShape::new(5, 3, 4, 6, 4), 41);
    let batch = vec![
        ex(vec![0, 1, 2, 3], vec![false, true, true, true]),
        ex(vec![3, 3, 3], vec![true, true, true]),
        ex(vec![1, 0, 4, 2, 1, 0], vec![false, false, false, true, false, true]),
        ex(vec![2], vec![true]),
    ];
    let got = m.masked_loss(&batch).unwrap();
    let want = oracle_loss(&m, &batch);
    assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    let (with_grad, _) = m.loss_and_grad(&batch).unwrap();
    assert!((with_grad - got).abs() < 1e-12);
}

#[test]
fn uniform_model_costs_log_vocab() {
    let m = ToyModel::uniform(ModelShape::new(5, 2, 3, 3, 0));
    let loss = m.masked_loss(&[ex(vec![1, 2, 3, 4], vec![true; 4])]).unwrap();
    assert!((loss - 5f64.ln()).abs() < 1e-12);
}

fn random_example(r: &mut rand_chacha::ChaCha8Rng, vocab: u32, len: usize) -> TokenizedExample {
    let tokens: Vec<u32> = (0..len).map(|_| r.random_range(0..vocab)).collect();
    let mut mask: Vec<bool> = (0..len).map(|i| i >= len / 3).collect();
    mask[len - 1] = true;
    ex(tokens, mask)
}

#[test]
fn analytic_gradient_agrees_with_central_differences() {
    let mut r = rng(31);
    let m = ToyModel::init(ModelShape::new(16, 8, 8, 12, 15), 5);
    let e = random_example(&mut r, 15, 24);
    let worst = finite_diff_check(&m, &e, 250, 9).unwrap();
    assert!(worst < 1e-3, "max relative error {worst:e}");
}

#[test]
fn central_difference_error_shrinks_quadratically() {
    let mut r = rng(32);
    let m = ToyModel::init(ModelShape::new(16, 8, 8, 12, 15), 6);
    let e = random_example(&mut r, 15, 24);
    let (_, grad) = m.loss_and_grad(std::slice::from_ref(&e)).unwrap();
    // a w1 entry fed by a non-pad slot
    let idx = m.params.embedding.len() + 7 * 8 + 3;
    let analytic = grad.get(idx);
    assert!(analytic.abs() > 1e-4);
    let err = |h: f64| (numeric_gradient(&m, &e, idx, h).unwrap() - analytic).abs();
    let ratio = err(0.2) / err(0.1);
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}

/// Positions whose token never enters the loss: masked off and not within
/// one window before any target.
fn free_positions(mask: &[bool], window: usize) -> Vec<usize> {
    (0..mask.len())
        .filter(|&i| !mask[i] && !mask[i + 1..mask.len().min(i + window + 1)].iter().any(|&m| m))
        .collect()
}

#[test]
fn long_prompt_head_is_free() {
    let mask: Vec<bool> = (0..20).map(|i| (12..18).contains(&i)).collect();
    assert_eq!(free_positions(&mask, 4), [0, 1, 2, 3, 4, 5, 6, 7, 18, 19]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rewriting_free_tokens_leaves_loss_bitwise_identical(
        seed in 0u64..10_000,
        len in 4usize..60,
        rewrites in prop::collection::vec(0u32..16, 60),
    ) {
        let mut r = rng(seed);
        let window = 8;
        let m = ToyModel::init(ModelShape::new(16, window, 4, 6, 15), seed);
        let tokens: Vec<u32> = (0..len).map(|_| r.random_range(0..16)).collect();
        let mut mask: Vec<bool> = (0..len).map(|_| r.random_bool(0.2)).collect();
        mask[len - 1] = true;
        let base = ex(tokens.clone(), mask.clone());
        let mut altered = base.clone();
        for (k, i) in free_positions(&mask, window).into_iter().enumerate() {
            altered.token_ids[i] = rewrites[k];
        }
        let a = m.masked_loss(std::slice::from_ref(&base)).unwrap();
        let b = m.masked_loss(std::slice::from_ref(&altered)).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        let (ga, gb) = (m.loss_and_grad(&[base]).unwrap(), m.loss_and_grad(&[altered]).unwrap());
        prop_assert_eq!(ga.0.to_bits(), gb.0.to_bits());
        prop_assert_eq!(ga.1.w2, gb.1.w2);
    }

    #[test]
    fn boundary_jump_recovers_a_planted_step(base in -5.0f64..5.0, jump in -3.0f64..3.0, window in 1usize..20) {
        let boundary = 40;
        let losses: Vec<f64> = (0..80).map(|i| if i < boundary { base } else { base + jump }).collect();
        let got = boundary_jump(&LossTrace::from_losses(&losses), boundary, window).unwrap();
        prop_assert!((got - jump).abs() < 1e-9);
    }
}

#[test]
fn unit_step_gives_unit_jump() {
    let losses: Vec<f64> = (0..100).map(|i| if i < 50 { 2.0 } else { 3.0 }).collect();
    assert_eq!(boundary_jump(&LossTrace::from_losses(&losses), 50, 20).unwrap(), 1.0);
}

fn sft_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        seed,
        window: 4,
        embed: 16,
        hidden: 32,
        ..TrainConfig::default()
    }
}

#[test]
fn one_stage_training_lowers_the_loss() {
    let corpus = ShiftedCorpus::generate(3, 0, 1000);
    let data = TrainData::OneStage(corpus.finetune_examples());
    let (model, trace) = train(&data, &sft_config(200, 3), VOCAB, PAD).unwrap();
    assert_eq!(trace.points.len(), 200);
    assert!(trace.losses().all(f64::is_finite));
    let head: f64 = trace.losses().take(10).sum::<f64>() / 10.0;
    let tail: f64 = trace.losses().skip(190).sum::<f64>() / 10.0;
    assert!(tail < head, "head {head} tail {tail}");
    assert!(head > (VOCAB as f64).ln() * 0.8);
    assert!(model.params.all_finite());
}

#[test]
fn training_is_deterministic_under_a_seed() {
    let corpus = ShiftedCorpus::generate(4, 0, 200);
    let data = TrainData::OneStage(corpus.finetune_examples());
    let a = train(&data, &sft_config(40, 11), VOCAB, PAD).unwrap();
    let b = train(&data, &sft_config(40, 11), VOCAB, PAD).unwrap();
    let c = train(&data, &sft_config(40, 12), VOCAB, PAD).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.1.to_csv(), b.1.to_csv());
    assert_ne!(a.1, c.1);
}

#[test]
fn trained_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ShiftedCorpus::generate(5, 0, 100);
    let (model, _) = train(&TrainData::OneStage(corpus.finetune_examples()), &sft_config(20, 1), VOCAB, PAD).unwrap();
    let path = dir.path().join("model.ckpt");
    model.save(&path).unwrap();
    let back = ToyModel::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.next_token_probs(&[1, 2, 3]), model.next_token_probs(&[1, 2, 3]));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(ToyModel::load(&path).is_err());
}

#[test]
fn over_long_examples_keep_their_tail() {
    let mut e = ex((0..10).collect(), (0..10).map(|i| i >= 6).collect());
    e.truncate_front(5);
    assert_eq!(e.token_ids, [5, 6, 7, 8, 9]);
    assert_eq!(e.loss_mask, [false, true, true, true, true]);
}

#[test]
fn malformed_batches_are_rejected() {
    let m = ToyModel::uniform(ModelShape::new(4, 2, 2, 2, 3));
    assert_eq!(m.masked_loss(&[ex(vec![1, 2], vec![true])]), Err(TrainError::MaskLength("x".into())));
    assert_eq!(m.masked_loss(&[ex(vec![1, 2], vec![false, false])]), Err(TrainError::NoTargets));
    let two = TrainConfig {
        mode: TrainMode::TwoStage,
        boundary_step: Some(5),
        warmup_steps: Some(2),
        total_steps: 10,
        ..sft_config(10, 0)
    };
    let empty = TrainData::TwoStage {
        pretrain: vec![ex(vec![1, 2], vec![true, true])],
        finetune: vec![],
    };
    assert_eq!(train(&empty, &two, 4, 3).unwrap_err(), TrainError::EmptyDataset);
}

#[test]
fn two_stage_schedule_jumps_at_the_boundary() {
    let jumps = BoundaryExperiment::default().run(1).unwrap();
    assert!(jumps.two_stage > 0.0, "{jumps:?}");
    assert!(jumps.two_stage >= 2.0 * jumps.one_stage.abs(), "{jumps:?}");
}
