//! Desk-scale masked-loss training.
//!
//! A tiny next-token model trained with plain SGD, either in one phase on
//! the compiled mixed dataset, or (as the experimental control) in two
//! phases: raw-text next-token training followed by instruction pairs with
//! a fresh linear warmup.

mod model;
pub mod synthetic;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use model::{softmax, ModelShape, Params, ToyModel, PARAM_NAMES};

use crate::config::ConfigIssue;
use crate::unify::TokenizedExample;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("batch has no loss-bearing positions")]
    NoTargets,
    #[error("example {0}: mask and token lengths differ")]
    MaskLength(String),
    #[error("token id {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training data does not match mode {0:?}")]
    ModeMismatch(TrainMode),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("window of {window} around step {boundary} overruns the trace")]
    WindowOverrun { boundary: usize, window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    OneStage,
    TwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    /// First step of the second phase (two-stage only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_step: Option<usize>,
    /// Linear warmup length at the start of the second phase (two-stage only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<usize>,
    pub seed: u64,
    pub window: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Longer examples keep only their last `max_seq_len` tokens.
    pub max_seq_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::OneStage,
            learning_rate: 0.1,
            batch_size: 8,
            total_steps: 200,
            boundary_step: None,
            warmup_steps: None,
            seed: 0,
            window: 8,
            embed: 32,
            hidden: 64,
            max_seq_len: 256,
        }
    }
}

const SHARED_FIELDS: [&str; 9] = [
    "mode",
    "learning_rate",
    "batch_size",
    "total_steps",
    "seed",
    "window",
    "embed",
    "hidden",
    "max_seq_len",
];

impl TrainConfig {
    /// Configuration fields that take effect under this config's mode.
    pub fn hyperparameter_names(&self) -> Vec<&'static str> {
        let mut names = SHARED_FIELDS.to_vec();
        if self.mode == TrainMode::TwoStage {
            names.extend(["boundary_step", "warmup_steps"]);
        }
        names
    }

    pub fn validate(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut bad = |field: &str, msg: String| issues.push(ConfigIssue::new(format!("{prefix}.{field}"), msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bad("learning_rate", "must be > 0".into());
        }
        for (field, v) in [
            ("batch_size", self.batch_size),
            ("total_steps", self.total_steps),
            ("window", self.window),
            ("embed", self.embed),
            ("hidden", self.hidden),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                bad(field, "must be at least 1".into());
            }
        }
        match self.mode {
            TrainMode::OneStage => {
                if self.boundary_step.is_some() {
                    bad("boundary_step", "only applies to two_stage".into());
                }
                if self.warmup_steps.is_some() {
                    bad("warmup_steps", "only applies to two_stage".into());
                }
            }
            TrainMode::TwoStage => {
                match self.boundary_step {
                    None => bad("boundary_step", "required for two_stage".into()),
                    Some(b) if b == 0 || b >= self.total_steps => {
                        bad("boundary_step", format!("must lie in 1..{}", self.total_steps))
                    }
                    _ => {}
                }
                if self.warmup_steps.is_none() {
                    bad("warmup_steps", "required for two_stage".into());
                }
            }
        }
        issues
    }

    /// Learning rate applied at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match (self.mode, self.boundary_step, self.warmup_steps) {
            (TrainMode::TwoStage, Some(b), Some(w)) if step >= b && w > 0 => {
                let k = (step - b + 1) as f64;
                self.learning_rate * (k / w as f64).min(1.0)
            }
            _ => self.learning_rate,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TrainData {
    /// The single compiled mixed dataset.
    OneStage(Vec<TokenizedExample>),
    /// Raw documents (all positions targets) then instruction pairs.
    TwoStage {
        pretrain: Vec<TokenizedExample>,
        finetune: Vec<TokenizedExample>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub points: Vec<(usize, f64)>,
}

impl LossTrace {
    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn from_losses(losses: &[f64]) -> Self {
        LossTrace {
            points: losses.iter().copied().enumerate().collect(),
        }
    }

    /// Two-column CSV with a `step,loss` header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.points {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())
    }

    fn mean_over(&self, lo: usize, hi: usize) -> Option<f64> {
        let vals: Vec<f64> = self.points.iter().filter(|(s, _)| (lo..hi).contains(s)).map(|p| p.1).collect();
        (vals.len() == hi - lo).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Mean loss over `[boundary, boundary + window)` minus mean loss over
/// `[boundary − window, boundary)`.
pub fn boundary_jump(trace: &LossTrace, boundary_step: usize, window: usize) -> Result<f64, TrainError> {
    let overrun = TrainError::WindowOverrun {
        boundary: boundary_step,
        window,
    };
    if window == 0 || boundary_step < window {
        return Err(overrun);
    }
    let after = trace.mean_over(boundary_step, boundary_step + window);
    let before = trace.mean_over(boundary_step - window, boundary_step);
    match (after, before) {
        (Some(a), Some(b)) => Ok(a - b),
        _ => Err(overrun),
    }
}

/// Epoch-shuffled batch iterator, deterministic under its generator.
struct Batches<'a> {
    data: &'a [TokenizedExample],
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> Batches<'a> {
    fn new(data: &'a [TokenizedExample]) -> Self {
        Batches {
            data,
            order: (0..data.len()).collect(),
            cursor: data.len(),
        }
    }

    fn next(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<TokenizedExample> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.data[self.order[self.cursor]].clone());
            self.cursor += 1;
        }
        out
    }
}

fn prepare(data: &[TokenizedExample], max_len: usize) -> Vec<TokenizedExample> {
    data.iter()
        .map(|ex| {
            let mut ex = ex.clone();
            ex.truncate_front(max_len);
            ex
        })
        .filter(|ex| ex.target_count() > 0)
        .collect()
}

/// Train a fresh model under `cfg`, recording the pre-update batch loss at
/// every step.
pub fn train(data: &TrainData, cfg: &TrainConfig, vocab: usize, pad_id: u32) -> Result<(ToyModel, LossTrace), TrainError> {
    if let Some(issue) = cfg.validate("train").into_iter().next() {
        return Err(TrainError::Config(issue.to_string()));
    }
    if pad_id as usize >= vocab {
        return Err(TrainError::Config(format!("pad id {pad_id} outside vocabulary {vocab}")));
    }
    let (first, second, boundary) = match (data, cfg.mode) {
        (TrainData::OneStage(d), TrainMode::OneStage) => (prepare(d, cfg.max_seq_len), Vec::new(), cfg.total_steps),
        (TrainData::TwoStage { pretrain, finetune }, TrainMode::TwoStage) => (
            prepare(pretrain, cfg.max_seq_len),
            prepare(finetune, cfg.max_seq_len),
            cfg.boundary_step.expect("validated"),
        ),
        _ => return Err(TrainError::ModeMismatch(cfg.mode)),
    };
    if first.is_empty() || (boundary < cfg.total_steps && second.is_empty()) {
        return Err(TrainError::EmptyDataset);
    }

    let shape = ModelShape::new(vocab, cfg.window, cfg.embed, cfg.hidden, pad_id);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ToyModel::init(shape, rng.random());
    let mut phase_one = Batches::new(&first);
    let mut phase_two = Batches::new(&second);
    let mut trace = LossTrace::default();

    for step in 0..cfg.total_steps {
        let batch = if step < boundary {
            phase_one.next(cfg.batch_size, &mut rng)
        } else {
            phase_two.next(cfg.batch_size, &mut rng)
        };
        let (loss, grad) = model.loss_and_grad(&batch)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { step, loss });
        }
        trace.points.push((step, loss));
        model.params.sgd_step(&grad, cfg.lr_at(step));
        if !model.params.all_finite() {
            return Err(TrainError::NonFinite { step, loss: f64::NAN });
        }
    }
    Ok((model, trace))
}

/// Central-difference estimate of ∂loss/∂θ for one flat parameter index.
pub fn numeric_gradient(model: &ToyModel, example: &TokenizedExample, index: usize, eps: f64) -> Result<f64, TrainError> {
    let mut probe = model.clone();
    let x = model.params.get(index);
    probe.params.set(index, x + eps);
    let up = probe.masked_loss(std::slice::from_ref(example))?;
    probe.params.set(index, x - eps);
    let down = probe.masked_loss(std::slice::from_ref(example))?;
    Ok((up - down) / (2.0 * eps))
}

/// Denominator floor so that two near-zero gradients compare as equal.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative disagreement between analytic and central-difference
/// gradients (ε = 1e-4) over a seeded sample of `samples` parameters drawn
/// evenly from every parameter array.
pub fn finite_diff_check(model: &ToyModel, example: &TokenizedExample, samples: usize, seed: u64) -> Result<f64, TrainError> {
    finite_diff_check_eps(model, example, samples, seed, 1e-4)
}

pub fn finite_diff_check_eps(
    model: &ToyModel,
    example: &TokenizedExample,
    samples: usize,
    seed: u64,
    eps: f64,
) -> Result<f64, TrainError> {
    let (_, grad) = model.loss_and_grad(std::slice::from_ref(example))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lens: Vec<usize> = model.params.arrays().iter().map(|a| a.len()).collect();
    let per_array = (samples / lens.len()).max(1);
    let mut worst: f64 = 0.0;
    let mut offset = 0;
    for len in lens {
        for _ in 0..per_array.min(len) {
            let idx = offset + rng.random_range(0..len);
            let numeric = numeric_gradient(model, example, idx, eps)?;
            worst = worst.max(relative_error(grad.get(idx), numeric));
        }
        offset += len;
    }
    Ok(worst)
}
