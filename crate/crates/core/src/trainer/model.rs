//! Fixed-window embedding + MLP next-token model with hand-written gradients.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::unify::TokenizedExample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab: usize,
    pub window: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Id used for context slots that fall before the start of a sequence.
    pub pad_id: u32,
}

impl ModelShape {
    pub fn new(vocab: usize, window: usize, embed: usize, hidden: usize, pad_id: u32) -> Self {
        ModelShape {
            vocab,
            window,
            embed,
            hidden,
            pad_id,
        }
    }

    fn context_width(&self) -> usize {
        self.window * self.embed
    }
}

/// Parameter arrays (or gradients with the same layout).
///
/// `w1` is `hidden × (window·embed)` and `w2` is `vocab × hidden`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embedding: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub const PARAM_NAMES: [&str; 5] = ["embedding", "w1", "b1", "w2", "b2"];

impl Params {
    pub fn zeros(shape: &ModelShape) -> Self {
        Params {
            embedding: vec![0.0; shape.vocab * shape.embed],
            w1: vec![0.0; shape.hidden * shape.context_width()],
            b1: vec![0.0; shape.hidden],
            w2: vec![0.0; shape.vocab * shape.hidden],
            b2: vec![0.0; shape.vocab],
        }
    }

    pub fn arrays(&self) -> [&Vec<f64>; 5] {
        [&self.embedding, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn arrays_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [&mut self.embedding, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn len(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self -= lr · grad`.
    pub fn sgd_step(&mut self, grad: &Params, lr: f64) {
        for (p, g) in self.arrays_mut().into_iter().zip(grad.arrays()) {
            for (x, dx) in p.iter_mut().zip(g) {
                *x -= lr * dx;
            }
        }
    }

    pub fn get(&self, flat: usize) -> f64 {
        let (a, i) = self.locate(flat);
        self.arrays()[a][i]
    }

    pub fn set(&mut self, flat: usize, value: f64) {
        let (a, i) = self.locate(flat);
        self.arrays_mut()[a][i] = value;
    }

    /// (array index in [`PARAM_NAMES`] order, offset within that array).
    pub fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (a, arr) in self.arrays().iter().enumerate() {
            if flat < arr.len() {
                return (a, flat);
            }
            flat -= arr.len();
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub shape: ModelShape,
    pub params: Params,
}

/// Scratch buffers for one position.
struct Workspace {
    context: Vec<u32>,
    e: Vec<f64>,
    z: Vec<f64>,
    logits: Vec<f64>,
    dz: Vec<f64>,
    da: Vec<f64>,
    de: Vec<f64>,
}

impl Workspace {
    fn new(s: &ModelShape) -> Self {
        Workspace {
            context: vec![0; s.window],
            e: vec![0.0; s.context_width()],
            z: vec![0.0; s.hidden],
            logits: vec![0.0; s.vocab],
            dz: vec![0.0; s.hidden],
            da: vec![0.0; s.hidden],
            de: vec![0.0; s.context_width()],
        }
    }
}

impl ToyModel {
    /// All-zero model: every position predicts the uniform distribution.
    pub fn uniform(shape: ModelShape) -> Self {
        ToyModel {
            params: Params::zeros(&shape),
            shape,
        }
    }

    /// Small uniform initialization, deterministic in `seed`.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(&shape);
        let s1 = 1.0 / (shape.context_width() as f64).sqrt();
        let s2 = 1.0 / (shape.hidden as f64).sqrt();
        for x in &mut params.embedding {
            *x = rng.random_range(-1.0..1.0);
        }
        for x in &mut params.w1 {
            *x = rng.random_range(-s1..s1);
        }
        for x in &mut params.w2 {
            *x = rng.random_range(-s2..s2);
        }
        ToyModel { shape, params }
    }

    fn fill_context(&self, tokens: &[u32], pos: usize, ctx: &mut [u32]) {
        let w = self.shape.window;
        for (s, slot) in ctx.iter_mut().enumerate() {
            // slot s holds the token at pos - w + s
            *slot = if pos + s >= w { tokens[pos + s - w] } else { self.shape.pad_id };
        }
    }

    /// Hidden activations and logits for the context in `ws.context`.
    fn forward(&self, ws: &mut Workspace) {
        let s = &self.shape;
        let p = &self.params;
        for (slot, &tok) in ws.context.iter().enumerate() {
            let row = &p.embedding[tok as usize * s.embed..(tok as usize + 1) * s.embed];
            ws.e[slot * s.embed..(slot + 1) * s.embed].copy_from_slice(row);
        }
        let cw = s.context_width();
        for j in 0..s.hidden {
            let row = &p.w1[j * cw..(j + 1) * cw];
            let a = p.b1[j] + row.iter().zip(&ws.e).map(|(w, x)| w * x).sum::<f64>();
            ws.z[j] = a.tanh();
        }
        for v in 0..s.vocab {
            let row = &p.w2[v * s.hidden..(v + 1) * s.hidden];
            ws.logits[v] = p.b2[v] + row.iter().zip(&ws.z).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Next-token distribution given the tokens preceding the prediction.
    pub fn next_token_probs(&self, history: &[u32]) -> Vec<f64> {
        let mut ws = Workspace::new(&self.shape);
        let mut seq = history.to_vec();
        seq.push(0);
        self.fill_context(&seq, history.len(), &mut ws.context);
        self.forward(&mut ws);
        softmax(&ws.logits)
    }

    /// Per-position logits for every position of `tokens` (for inspection).
    pub fn logits_at(&self, tokens: &[u32], pos: usize) -> Vec<f64> {
        let mut ws = Workspace::new(&self.shape);
        self.fill_context(tokens, pos, &mut ws.context);
        self.forward(&mut ws);
        ws.logits
    }

    fn check_batch(&self, batch: &[TokenizedExample]) -> Result<usize, TrainError> {
        let mut targets = 0;
        for ex in batch {
            if ex.token_ids.len() != ex.loss_mask.len() {
                return Err(TrainError::MaskLength(ex.pair_id.clone()));
            }
            if let Some(&t) = ex.token_ids.iter().find(|&&t| t as usize >= self.shape.vocab) {
                return Err(TrainError::TokenOutOfRange {
                    token: t,
                    vocab: self.shape.vocab,
                });
            }
            targets += ex.target_count();
        }
        if targets == 0 {
            return Err(TrainError::NoTargets);
        }
        Ok(targets)
    }

    /// Mean next-token cross-entropy over the positions whose mask is set.
    pub fn masked_loss(&self, batch: &[TokenizedExample]) -> Result<f64, TrainError> {
        let n = self.check_batch(batch)?;
        let mut ws = Workspace::new(&self.shape);
        let mut total = 0.0;
        for ex in batch {
            for (pos, _) in ex.loss_mask.iter().enumerate().filter(|(_, &m)| m) {
                self.fill_context(&ex.token_ids, pos, &mut ws.context);
                self.forward(&mut ws);
                total += nll(&ws.logits, ex.token_ids[pos] as usize);
            }
        }
        Ok(total / n as f64)
    }

    /// Masked loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &[TokenizedExample]) -> Result<(f64, Params), TrainError> {
        let n = self.check_batch(batch)?;
        let s = self.shape;
        let p = &self.params;
        let cw = s.context_width();
        let scale = 1.0 / n as f64;
        let mut g = Params::zeros(&s);
        let mut ws = Workspace::new(&s);
        let mut total = 0.0;

        for ex in batch {
            for (pos, _) in ex.loss_mask.iter().enumerate().filter(|(_, &m)| m) {
                self.fill_context(&ex.token_ids, pos, &mut ws.context);
                self.forward(&mut ws);
                let target = ex.token_ids[pos] as usize;

                let lse = log_sum_exp(&ws.logits);
                total += lse - ws.logits[target];
                // dlogits = softmax - onehot, scaled by 1/n; reuse the logits buffer
                for l in ws.logits.iter_mut() {
                    *l = (*l - lse).exp() * scale;
                }
                ws.logits[target] -= scale;

                ws.dz.iter_mut().for_each(|x| *x = 0.0);
                for v in 0..s.vocab {
                    let dl = ws.logits[v];
                    g.b2[v] += dl;
                    let row = v * s.hidden..(v + 1) * s.hidden;
                    for ((gw, w), (z, dz)) in g.w2[row.clone()]
                        .iter_mut()
                        .zip(&p.w2[row])
                        .zip(ws.z.iter().zip(ws.dz.iter_mut()))
                    {
                        *gw += dl * z;
                        *dz += w * dl;
                    }
                }
                for j in 0..s.hidden {
                    ws.da[j] = ws.dz[j] * (1.0 - ws.z[j] * ws.z[j]);
                }
                ws.de.iter_mut().for_each(|x| *x = 0.0);
                for j in 0..s.hidden {
                    let da = ws.da[j];
                    g.b1[j] += da;
                    let row = j * cw..(j + 1) * cw;
                    for ((gw, w), (e, de)) in g.w1[row.clone()]
                        .iter_mut()
                        .zip(&p.w1[row])
                        .zip(ws.e.iter().zip(ws.de.iter_mut()))
                    {
                        *gw += da * e;
                        *de += w * da;
                    }
                }
                for (slot, &tok) in ws.context.iter().enumerate() {
                    let dst = &mut g.embedding[tok as usize * s.embed..(tok as usize + 1) * s.embed];
                    for (d, src) in dst.iter_mut().zip(&ws.de[slot * s.embed..(slot + 1) * s.embed]) {
                        *d += src;
                    }
                }
            }
        }
        Ok((total * scale, g))
    }

    /// Write `[u64 LE header length][JSON header][f64 LE parameters]`.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let header = CheckpointHeader {
            shape: self.shape,
            arrays: PARAM_NAMES
                .iter()
                .zip(self.params.arrays())
                .map(|(name, a)| ArrayInfo {
                    name: name.to_string(),
                    len: a.len(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        for arr in self.params.arrays() {
            for x in arr {
                f.write_all(&x.to_le_bytes())?;
            }
        }
        f.flush()
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut len = [0u8; 8];
        f.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        f.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        let mut model = ToyModel::uniform(header.shape);
        for (arr, info) in model.params.arrays_mut().into_iter().zip(&header.arrays) {
            if arr.len() != info.len {
                return Err(invalid(format!("array {} has length {}, expected {}", info.name, info.len, arr.len())));
            }
            let mut buf = [0u8; 8];
            for x in arr.iter_mut() {
                f.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    shape: ModelShape,
    arrays: Vec<ArrayInfo>,
}

#[derive(Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    len: usize,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn nll(logits: &[f64], target: usize) -> f64 {
    log_sum_exp(logits) - logits[target]
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}
