//! Synthetic token corpus with a built-in distribution shift.
//!
//! "Pretrain-style" documents are drawn from a Markov chain over one
//! sub-vocabulary; "SFT-style" pairs use a disjoint sub-vocabulary with
//! their own chains for instructions and outputs. Training on the first
//! kind and then switching to the second reproduces the loss discontinuity
//! of a two-phase schedule.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{boundary_jump, train, TrainConfig, TrainData, TrainError, TrainMode};
use crate::compiler::{interleave, MixSpec};
use crate::unify::{Provenance, TokenizedExample};

pub const DOC_VOCAB_START: u32 = 0;
pub const SFT_VOCAB_START: u32 = 12;
pub const SUB_VOCAB: u32 = 12;
pub const QUESTION: u32 = 24;
pub const SEP: u32 = 25;
pub const EOS: u32 = 26;
pub const PAD: u32 = 27;
pub const VOCAB: usize = 28;

/// How many leading document tokens become the question when a document
/// is rewritten into a pair.
const PROMPT_TOKENS: usize = 4;

struct Chain {
    start: u32,
    next: Vec<[u32; 2]>,
}

impl Chain {
    fn new(start: u32, rng: &mut ChaCha8Rng) -> Self {
        let next = (0..SUB_VOCAB)
            .map(|_| {
                let a = rng.random_range(0..SUB_VOCAB);
                let b = (a + 1 + rng.random_range(0..SUB_VOCAB - 1)) % SUB_VOCAB;
                [start + a, start + b]
            })
            .collect();
        Chain { start, next }
    }

    fn sample(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let mut tok = self.start + rng.random_range(0..SUB_VOCAB);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(tok);
            let succ = &self.next[(tok - self.start) as usize];
            tok = if rng.random_bool(0.8) { succ[0] } else { succ[1] };
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ShiftedCorpus {
    pub docs: Vec<Vec<u32>>,
    pub pairs: Vec<(Vec<u32>, Vec<u32>)>,
}

impl ShiftedCorpus {
    pub fn generate(seed: u64, n_docs: usize, n_pairs: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc_chain = Chain::new(DOC_VOCAB_START, &mut rng);
        let question_chain = Chain::new(SFT_VOCAB_START, &mut rng);
        let answer_chain = Chain::new(SFT_VOCAB_START, &mut rng);
        let docs = (0..n_docs)
            .map(|_| {
                let len = rng.random_range(16..=32);
                doc_chain.sample(len, &mut rng)
            })
            .collect();
        let pairs = (0..n_pairs)
            .map(|_| {
                let q_len = rng.random_range(4..=8);
                let a_len = rng.random_range(8..=16);
                (question_chain.sample(q_len, &mut rng), answer_chain.sample(a_len, &mut rng))
            })
            .collect();
        ShiftedCorpus { docs, pairs }
    }

    /// Raw documents with every position a target.
    pub fn pretrain_examples(&self) -> Vec<TokenizedExample> {
        self.docs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut token_ids = d.clone();
                token_ids.push(EOS);
                TokenizedExample {
                    loss_mask: vec![true; token_ids.len()],
                    token_ids,
                    pair_id: format!("doc{i}"),
                }
            })
            .collect()
    }

    fn pair_example(id: String, instruction: &[u32], output: &[u32]) -> TokenizedExample {
        let mut token_ids = instruction.to_vec();
        token_ids.push(SEP);
        let mut loss_mask = vec![false; token_ids.len()];
        token_ids.extend(output);
        token_ids.push(EOS);
        loss_mask.resize(token_ids.len(), true);
        TokenizedExample {
            token_ids,
            loss_mask,
            pair_id: id,
        }
    }

    pub fn finetune_examples(&self) -> Vec<TokenizedExample> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(i, (q, a))| Self::pair_example(format!("sft{i}"), q, a))
            .collect()
    }

    /// Documents rewritten as pairs: a question marker plus the opening
    /// tokens as the instruction, the rest of the document as the output.
    pub fn transformed_examples(&self) -> Vec<TokenizedExample> {
        self.docs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut q = vec![QUESTION];
                q.extend(&d[..PROMPT_TOKENS]);
                Self::pair_example(format!("doc{i}"), &q, &d[PROMPT_TOKENS..])
            })
            .collect()
    }

    /// Transformed documents and native pairs mixed 1:1 by the dataset compiler's sampler.
    pub fn one_stage_examples(&self, seed: u64) -> Vec<TokenizedExample> {
        let classes = BTreeMap::from([
            (Provenance::TransformedPretrain, self.transformed_examples()),
            (Provenance::NativeSft, self.finetune_examples()),
        ]);
        interleave(classes, &MixSpec { seed, ..MixSpec::default() }).items
    }

    pub fn one_stage(&self, seed: u64) -> TrainData {
        TrainData::OneStage(self.one_stage_examples(seed))
    }

    pub fn two_stage(&self) -> TrainData {
        TrainData::TwoStage {
            pretrain: self.pretrain_examples(),
            finetune: self.finetune_examples(),
        }
    }
}

/// Settings for the paired one-stage / two-stage comparison.
#[derive(Debug, Clone)]
pub struct BoundaryExperiment {
    pub n_docs: usize,
    pub n_pairs: usize,
    pub total_steps: usize,
    pub boundary_step: usize,
    pub warmup_steps: usize,
    pub window: usize,
    pub train: TrainConfig,
}

impl Default for BoundaryExperiment {
    fn default() -> Self {
        BoundaryExperiment {
            n_docs: 200,
            n_pairs: 200,
            total_steps: 300,
            boundary_step: 150,
            warmup_steps: 10,
            window: 20,
            train: TrainConfig {
                window: 4,
                embed: 16,
                hidden: 32,
                batch_size: 8,
                learning_rate: 0.1,
                ..TrainConfig::default()
            },
        }
    }
}

/// Jumps measured at the same step for both schedules on one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpPair {
    pub one_stage: f64,
    pub two_stage: f64,
}

impl BoundaryExperiment {
    pub fn run(&self, seed: u64) -> Result<JumpPair, TrainError> {
        let corpus = ShiftedCorpus::generate(seed, self.n_docs, self.n_pairs);
        let one_cfg = TrainConfig {
            mode: TrainMode::OneStage,
            total_steps: self.total_steps,
            seed,
            ..self.train.clone()
        };
        let two_cfg = TrainConfig {
            mode: TrainMode::TwoStage,
            boundary_step: Some(self.boundary_step),
            warmup_steps: Some(self.warmup_steps),
            ..one_cfg.clone()
        };
        let (_, one) = train(&corpus.one_stage(seed), &one_cfg, VOCAB, PAD)?;
        let (_, two) = train(&corpus.two_stage(), &two_cfg, VOCAB, PAD)?;
        Ok(JumpPair {
            one_stage: boundary_jump(&one, self.boundary_step, self.window)?,
            two_stage: boundary_jump(&two, self.boundary_step, self.window)?,
        })
    }
}
