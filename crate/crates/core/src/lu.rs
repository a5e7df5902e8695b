//! Intent classifier: stacked bidirectional GRU, mean-pooled over time,
//! followed by a linear layer and softmax.
//!
//! The same network type serves three input routes: raw latent frames,
//! summarized frames, and decoded label ids looked up in a trained embedding
//! table. All parameters live in one flat `f64` vector whose canonical order
//! is, for each layer and then each direction (forward, backward):
//! `w_ih (3H x in)`, `w_hh (3H x H)`, `b_ih (3H)`, `b_hh (3H)`; then the output
//! layer `w_out (K x 2H)`, `b_out (K)`; then the optional embedding table
//! `(V x D)`. Gate rows are ordered reset, update, candidate.
//!
//! Training is plain backpropagation through time with Adam. Per-sample
//! gradients of a mini-batch are computed in parallel and summed in batch
//! order, so results do not depend on the thread count.

use std::fs;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::formats::{put_f32s, put_u32, Reader, FORMAT_VERSION};
use crate::seqcore::{argmax, LatentSequence};

pub const MODEL_MAGIC: &[u8; 4] = b"CTSM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LuConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub num_intents: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Size of the label-embedding table for the text route; `None` for
    /// models that read latent frames.
    #[serde(default)]
    pub vocab_size: Option<usize>,
}

impl LuConfig {
    pub fn new(input_dim: usize, num_intents: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden: 32,
            layers: 2,
            num_intents,
            learning_rate: 0.005,
            epochs: 12,
            batch_size: 16,
            seed,
            vocab_size: None,
        }
    }

    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = Some(vocab_size);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("num_intents", self.num_intents),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size == Some(0) {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CellLayout {
    in_dim: usize,
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    hidden: usize,
    cells: Vec<CellLayout>,
    w_out: usize,
    b_out: usize,
    embedding: Option<usize>,
    total: usize,
}

impl Layout {
    fn new(config: &LuConfig) -> Self {
        let h = config.hidden;
        let mut offset = 0;
        let mut cells = Vec::with_capacity(config.layers * 2);
        for layer in 0..config.layers {
            let in_dim = if layer == 0 { config.input_dim } else { 2 * h };
            for _direction in 0..2 {
                let w_ih = offset;
                let w_hh = w_ih + 3 * h * in_dim;
                let b_ih = w_hh + 3 * h * h;
                let b_hh = b_ih + 3 * h;
                offset = b_hh + 3 * h;
                cells.push(CellLayout {
                    in_dim,
                    w_ih,
                    w_hh,
                    b_ih,
                    b_hh,
                });
            }
        }
        let w_out = offset;
        let b_out = w_out + config.num_intents * 2 * h;
        offset = b_out + config.num_intents;
        let embedding = config.vocab_size.map(|_| offset);
        if let Some(v) = config.vocab_size {
            offset += v * config.input_dim;
        }
        Self {
            hidden: h,
            cells,
            w_out,
            b_out,
            embedding,
            total: offset,
        }
    }

    /// `(start, len, fan_in)` for every tensor in canonical order.
    fn tensors(&self, config: &LuConfig) -> Vec<(usize, usize, usize)> {
        let h = self.hidden;
        let mut out = Vec::new();
        for cell in &self.cells {
            out.push((cell.w_ih, 3 * h * cell.in_dim, cell.in_dim));
            out.push((cell.w_hh, 3 * h * h, h));
            out.push((cell.b_ih, 3 * h, h));
            out.push((cell.b_hh, 3 * h, h));
        }
        out.push((self.w_out, config.num_intents * 2 * h, 2 * h));
        out.push((self.b_out, config.num_intents, 2 * h));
        if let (Some(start), Some(v)) = (self.embedding, config.vocab_size) {
            // a lookup is a linear map of a one-hot input
            out.push((start, v * config.input_dim, 1));
        }
        out
    }
}

/// Input to the classifier: frame vectors, or label ids for the text route.
#[derive(Debug, Clone, PartialEq)]
pub enum LuInput {
    Vectors(Vec<Vec<f64>>),
    Labels(Vec<usize>),
}

impl LuInput {
    pub fn from_latent(seq: &LatentSequence) -> Self {
        LuInput::Vectors(seq.to_f64_rows())
    }

    pub fn from_labels(labels: &LabelSequence) -> Self {
        LuInput::Labels(labels.ids.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LuSample {
    pub input: LuInput,
    pub intent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LuModel {
    config: LuConfig,
    layout: Layout,
    params: Vec<f64>,
}

/// Layer input plus forward and backward cell traces.
type LayerTrace = (Vec<Vec<f64>>, CellTrace, CellTrace);

/// Per-step activations kept for backpropagation.
#[derive(Default)]
struct CellTrace {
    // processing order: time index of each step
    order: Vec<usize>,
    h_prev: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    ghn: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec_add(w: &[f64], x: &[f64], b: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = b[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl LuModel {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(config: &LuConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (start, len, fan_in) in layout.tensors(config) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for p in &mut params[start..start + len] {
                *p = dist.sample(&mut rng);
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            params,
        })
    }

    /// A model with every parameter set to zero.
    pub fn zeros(config: &LuConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        Ok(Self {
            config: config.clone(),
            params: vec![0.0; layout.total],
            layout,
        })
    }

    pub fn from_params(config: &LuConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if params.len() != layout.total {
            return Err(Error::Dimension {
                context: "model parameters",
                expected: layout.total,
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self {
            config: config.clone(),
            layout,
            params,
        })
    }

    pub fn config(&self) -> &LuConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn has_embedding(&self) -> bool {
        self.layout.embedding.is_some()
    }

    /// Mutable view of the embedding table, row-major `V x D`.
    pub fn embedding_mut(&mut self) -> Option<&mut [f64]> {
        let start = self.layout.embedding?;
        let len = self.config.vocab_size? * self.config.input_dim;
        Some(&mut self.params[start..start + len])
    }

    /// Same network with a different training schedule (used for fine-tuning).
    pub fn with_schedule(
        mut self,
        learning_rate: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        self.config.learning_rate = learning_rate;
        self.config.epochs = epochs;
        self.config.batch_size = batch_size;
        self.config.seed = seed;
        self
    }

    /// Looks up each id in the embedding table. An empty sequence yields a
    /// single all-zero vector.
    pub fn embed_labels(&self, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        let (start, vocab) = match (self.layout.embedding, self.config.vocab_size) {
            (Some(start), Some(v)) => (start, v),
            _ => return Err(Error::Mode("model has no label-embedding table".into())),
        };
        let d = self.config.input_dim;
        if ids.is_empty() {
            return Ok(vec![vec![0.0; d]]);
        }
        ids.iter()
            .map(|&id| {
                if id >= vocab {
                    return Err(Error::LabelOutOfRange {
                        label: id,
                        size: vocab,
                    });
                }
                Ok(self.params[start + id * d..start + (id + 1) * d].to_vec())
            })
            .collect()
    }

    fn resolve_input(&self, input: &LuInput) -> Result<Vec<Vec<f64>>> {
        let rows = match input {
            LuInput::Vectors(rows) => {
                if self.has_embedding() {
                    return Err(Error::Mode("text model given frame vectors".into()));
                }
                rows.clone()
            }
            LuInput::Labels(ids) => self.embed_labels(ids)?,
        };
        self.check_rows(&rows)?;
        Ok(rows)
    }

    fn check_rows(&self, rows: &[Vec<f64>]) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::Empty("classifier input"));
        }
        for row in rows {
            if row.len() != self.config.input_dim {
                return Err(Error::Dimension {
                    context: "classifier input",
                    expected: self.config.input_dim,
                    actual: row.len(),
                });
            }
        }
        Ok(())
    }

    fn run_cell(
        &self,
        cell: &CellLayout,
        inputs: &[Vec<f64>],
        reverse: bool,
        mut trace: Option<&mut CellTrace>,
    ) -> Vec<Vec<f64>> {
        let h = self.layout.hidden;
        let p = &self.params;
        let w_ih = &p[cell.w_ih..cell.w_ih + 3 * h * cell.in_dim];
        let w_hh = &p[cell.w_hh..cell.w_hh + 3 * h * h];
        let b_ih = &p[cell.b_ih..cell.b_ih + 3 * h];
        let b_hh = &p[cell.b_hh..cell.b_hh + 3 * h];

        let steps = inputs.len();
        let mut outputs = vec![Vec::new(); steps];
        let mut state = vec![0.0; h];
        let mut gi = vec![0.0; 3 * h];
        let mut gh = vec![0.0; 3 * h];
        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            matvec_add(w_ih, &inputs[t], b_ih, &mut gi);
            matvec_add(w_hh, &state, b_hh, &mut gh);
            let mut r = vec![0.0; h];
            let mut z = vec![0.0; h];
            let mut n = vec![0.0; h];
            let mut next = vec![0.0; h];
            for j in 0..h {
                r[j] = sigmoid(gi[j] + gh[j]);
                z[j] = sigmoid(gi[h + j] + gh[h + j]);
                n[j] = (gi[2 * h + j] + r[j] * gh[2 * h + j]).tanh();
                next[j] = (1.0 - z[j]) * n[j] + z[j] * state[j];
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.order.push(t);
                tr.h_prev.push(std::mem::take(&mut state));
                tr.r.push(r);
                tr.z.push(z);
                tr.n.push(n);
                tr.ghn.push(gh[2 * h..].to_vec());
            }
            outputs[t] = next.clone();
            state = next;
        }
        outputs
    }

    /// Runs every layer; returns the top layer's per-frame outputs `[fwd | bwd]`
    /// and, when requested, the traces and layer inputs for backprop.
    fn encode(&self, rows: &[Vec<f64>], mut traces: Option<&mut Vec<LayerTrace>>) -> Vec<Vec<f64>> {
        let mut inputs = rows.to_vec();
        for layer in 0..self.config.layers {
            let fwd_cell = self.layout.cells[2 * layer];
            let bwd_cell = self.layout.cells[2 * layer + 1];
            let (fwd, bwd) = match traces.as_deref_mut() {
                Some(store) => {
                    let mut tf = CellTrace::default();
                    let mut tb = CellTrace::default();
                    let fwd = self.run_cell(&fwd_cell, &inputs, false, Some(&mut tf));
                    let bwd = self.run_cell(&bwd_cell, &inputs, true, Some(&mut tb));
                    store.push((inputs, tf, tb));
                    (fwd, bwd)
                }
                None => (
                    self.run_cell(&fwd_cell, &inputs, false, None),
                    self.run_cell(&bwd_cell, &inputs, true, None),
                ),
            };
            inputs = fwd
                .into_iter()
                .zip(bwd)
                .map(|(mut f, b)| {
                    f.extend(b);
                    f
                })
                .collect();
        }
        inputs
    }

    fn head(&self, top: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let width = 2 * self.layout.hidden;
        let mut pooled = vec![0.0; width];
        for row in top {
            for (p, x) in pooled.iter_mut().zip(row) {
                *p += x;
            }
        }
        let scale = 1.0 / top.len() as f64;
        pooled.iter_mut().for_each(|p| *p *= scale);
        let k = self.config.num_intents;
        let w_out = &self.params[self.layout.w_out..self.layout.w_out + k * width];
        let b_out = &self.params[self.layout.b_out..self.layout.b_out + k];
        let mut logits = vec![0.0; k];
        matvec_add(w_out, &pooled, b_out, &mut logits);
        (pooled, softmax(&logits))
    }

    /// Intent posterior for a sequence of `D`-dimensional vectors.
    pub fn forward(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_rows(rows)?;
        let top = self.encode(rows, None);
        Ok(self.head(&top).1)
    }

    pub fn forward_input(&self, input: &LuInput) -> Result<Vec<f64>> {
        let rows = self.resolve_input(input)?;
        let top = self.encode(&rows, None);
        Ok(self.head(&top).1)
    }

    pub fn forward_latent(&self, seq: &LatentSequence) -> Result<Vec<f64>> {
        if self.has_embedding() {
            return Err(Error::Mode("text model given frame vectors".into()));
        }
        self.forward(&seq.to_f64_rows())
    }

    /// Most probable intent; ties go to the lowest class id.
    pub fn classify(&self, input: &LuInput) -> Result<usize> {
        Ok(argmax(&self.forward_input(input)?))
    }

    /// Cross-entropy of one sample.
    pub fn loss(&self, sample: &LuSample) -> Result<f64> {
        self.check_intent(sample.intent)?;
        let probs = self.forward_input(&sample.input)?;
        Ok(-probs[sample.intent].max(f64::MIN_POSITIVE).ln())
    }

    fn check_intent(&self, intent: usize) -> Result<()> {
        if intent >= self.config.num_intents {
            return Err(Error::LabelOutOfRange {
                label: intent,
                size: self.config.num_intents,
            });
        }
        Ok(())
    }

    /// Loss and gradient of one sample with respect to every parameter.
    pub fn loss_and_gradient(&self, sample: &LuSample) -> Result<(f64, Vec<f64>)> {
        self.check_intent(sample.intent)?;
        let rows = self.resolve_input(&sample.input)?;
        let mut traces = Vec::with_capacity(self.config.layers);
        let top = self.encode(&rows, Some(&mut traces));
        let (pooled, probs) = self.head(&top);
        let loss = -probs[sample.intent].max(f64::MIN_POSITIVE).ln();

        let mut grad = vec![0.0; self.layout.total];
        let k = self.config.num_intents;
        let width = 2 * self.layout.hidden;
        let mut dlogits = probs;
        dlogits[sample.intent] -= 1.0;
        let w_out = &self.params[self.layout.w_out..self.layout.w_out + k * width];
        let mut dpooled = vec![0.0; width];
        for (c, &dl) in dlogits.iter().enumerate() {
            grad[self.layout.b_out + c] += dl;
            for j in 0..width {
                grad[self.layout.w_out + c * width + j] += dl * pooled[j];
                dpooled[j] += dl * w_out[c * width + j];
            }
        }
        let steps = rows.len();
        let scale = 1.0 / steps as f64;
        let mut d_out: Vec<Vec<f64>> = vec![dpooled.iter().map(|d| d * scale).collect(); steps];

        let h = self.layout.hidden;
        for layer in (0..self.config.layers).rev() {
            let (inputs, tf, tb) = &traces[layer];
            let d_fwd: Vec<Vec<f64>> = d_out.iter().map(|d| d[..h].to_vec()).collect();
            let d_bwd: Vec<Vec<f64>> = d_out.iter().map(|d| d[h..].to_vec()).collect();
            let mut d_in = vec![vec![0.0; inputs[0].len()]; steps];
            self.backprop_cell(
                &self.layout.cells[2 * layer],
                inputs,
                tf,
                &d_fwd,
                &mut d_in,
                &mut grad,
            );
            self.backprop_cell(
                &self.layout.cells[2 * layer + 1],
                inputs,
                tb,
                &d_bwd,
                &mut d_in,
                &mut grad,
            );
            d_out = d_in;
        }

        if let (LuInput::Labels(ids), Some(start)) = (&sample.input, self.layout.embedding) {
            let d = self.config.input_dim;
            for (&id, dx) in ids.iter().zip(&d_out) {
                for j in 0..d {
                    grad[start + id * d + j] += dx[j];
                }
            }
        }
        Ok((loss, grad))
    }

    fn backprop_cell(
        &self,
        cell: &CellLayout,
        inputs: &[Vec<f64>],
        trace: &CellTrace,
        d_out: &[Vec<f64>],
        d_in: &mut [Vec<f64>],
        grad: &mut [f64],
    ) {
        let h = self.layout.hidden;
        let in_dim = cell.in_dim;
        let w_ih = &self.params[cell.w_ih..cell.w_ih + 3 * h * in_dim];
        let w_hh = &self.params[cell.w_hh..cell.w_hh + 3 * h * h];
        let mut carry = vec![0.0; h];
        let mut dgi = vec![0.0; 3 * h];
        let mut dgh = vec![0.0; 3 * h];
        for k in (0..trace.order.len()).rev() {
            let t = trace.order[k];
            let (h_prev, r, z, n, ghn) = (
                &trace.h_prev[k],
                &trace.r[k],
                &trace.z[k],
                &trace.n[k],
                &trace.ghn[k],
            );
            let mut dh_prev = vec![0.0; h];
            for j in 0..h {
                let dh = d_out[t][j] + carry[j];
                let dn = dh * (1.0 - z[j]);
                let dz = dh * (h_prev[j] - n[j]);
                dh_prev[j] = dh * z[j];
                let dan = dn * (1.0 - n[j] * n[j]);
                let dr = dan * ghn[j];
                let dar = dr * r[j] * (1.0 - r[j]);
                let daz = dz * z[j] * (1.0 - z[j]);
                dgi[j] = dar;
                dgi[h + j] = daz;
                dgi[2 * h + j] = dan;
                dgh[j] = dar;
                dgh[h + j] = daz;
                dgh[2 * h + j] = dan * r[j];
            }
            let x = &inputs[t];
            for i in 0..3 * h {
                let g = dgi[i];
                if g != 0.0 {
                    let row = cell.w_ih + i * in_dim;
                    for (c, &xc) in x.iter().enumerate() {
                        grad[row + c] += g * xc;
                        d_in[t][c] += g * w_ih[i * in_dim + c];
                    }
                }
                grad[cell.b_ih + i] += g;
                let gh = dgh[i];
                if gh != 0.0 {
                    let row = cell.w_hh + i * h;
                    for c in 0..h {
                        grad[row + c] += gh * h_prev[c];
                        dh_prev[c] += gh * w_hh[i * h + c];
                    }
                }
                grad[cell.b_hh + i] += gh;
            }
            carry = dh_prev;
        }
    }
}

/// Per-epoch mean training loss; entry 0 is the loss at initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

fn mean_loss(model: &LuModel, corpus: &[LuSample]) -> Result<f64> {
    let losses: Result<Vec<f64>> = corpus.par_iter().map(|s| model.loss(s)).collect();
    Ok(losses?.iter().sum::<f64>() / corpus.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Train a freshly initialized model.
pub fn lu_train(config: &LuConfig, corpus: &[LuSample]) -> Result<(LuModel, TrainReport)> {
    let model = LuModel::init(config)?;
    lu_fine_tune(model, corpus)
}

/// Continue training `model` using the schedule in its config.
pub fn lu_fine_tune(mut model: LuModel, corpus: &[LuSample]) -> Result<(LuModel, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    for sample in corpus {
        model.check_intent(sample.intent)?;
    }
    let config = model.config.clone();
    let mut losses = vec![mean_loss(&model, corpus)?];
    let mut adam = Adam::new(model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_5417);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Result<Vec<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| model.loss_and_gradient(&corpus[i]))
                .collect();
            let mut total = vec![0.0; model.params.len()];
            for (loss, grad) in results? {
                epoch_loss += loss;
                for (acc, g) in total.iter_mut().zip(&grad) {
                    *acc += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            total.iter_mut().for_each(|g| *g *= scale);
            adam.update(&mut model.params, &total, config.learning_rate);
        }
        losses.push(epoch_loss / corpus.len() as f64);
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("trained parameters"));
    }
    Ok((
        model,
        TrainReport {
            epoch_losses: losses,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

/// Finite-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Gradients smaller than this in magnitude are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences for every
/// parameter of a freshly initialized model.
pub fn gradient_check(config: &LuConfig, sample: &LuSample) -> Result<GradCheck> {
    gradient_check_model(&LuModel::init(config)?, sample)
}

pub fn gradient_check_model(model: &LuModel, sample: &LuSample) -> Result<GradCheck> {
    let (_, analytic) = model.loss_and_gradient(sample)?;
    let mut probe = model.clone();
    let mut worst = GradCheck {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
    };
    for i in 0..model.params.len() {
        let original = probe.params[i];
        probe.params[i] = original + GRAD_CHECK_STEP;
        let plus = probe.loss(sample)?;
        probe.params[i] = original - GRAD_CHECK_STEP;
        let minus = probe.loss(sample)?;
        probe.params[i] = original;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst.max_absolute_error = worst.max_absolute_error.max(abs);
        worst.max_relative_error = worst.max_relative_error.max(rel);
    }
    Ok(worst)
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: LuConfig,
    param_count: usize,
}

/// `"CTSM"`, version `u16`, header length `u32`, JSON header, then the
/// parameters as `f32` in canonical order.
pub fn encode_model(model: &LuModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ModelHeader {
        config: model.config.clone(),
        param_count: model.params.len(),
    })?;
    let mut out = Vec::with_capacity(10 + header.len() + model.params.len() * 4);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, header.len());
    out.extend_from_slice(&header);
    let params: Vec<f32> = model.params.iter().map(|&p| p as f32).collect();
    put_f32s(&mut out, &params);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<LuModel> {
    let mut r = Reader::new(bytes, "model");
    r.magic(MODEL_MAGIC)?;
    r.version()?;
    let len = r.u32()? as usize;
    let header: ModelHeader = serde_json::from_slice(r.take(len)?)?;
    let params = r.f32s(header.param_count)?;
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    LuModel::from_params(&header.config, params.into_iter().map(f64::from).collect())
}

pub fn write_model(path: impl AsRef<Path>, model: &LuModel) -> Result<()> {
    Ok(fs::write(path, encode_model(model)?)?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<LuModel> {
    decode_model(&fs::read(path)?)
}
