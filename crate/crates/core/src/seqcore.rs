//! Core numeric containers and the CTC-projection softmax / argmax primitives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this value before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-30;

/// Default latent frame shift in milliseconds.
pub const DEFAULT_FRAME_SHIFT_MS: f32 = 10.0;

/// A `T x D` matrix of encoder activations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    frames: Vec<f32>,
    dim: usize,
    frame_shift_ms: f32,
}

impl LatentSequence {
    pub fn new(frames: Vec<f32>, dim: usize, frame_shift_ms: f32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("latent dimension"));
        }
        if frames.is_empty() {
            return Err(Error::Empty("latent sequence"));
        }
        if !frames.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                context: "latent frames",
                expected: dim,
                actual: frames.len() % dim,
            });
        }
        if !(frame_shift_ms.is_finite() && frame_shift_ms > 0.0) {
            return Err(Error::Config(format!(
                "frame shift must be positive, got {frame_shift_ms}"
            )));
        }
        if frames.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("latent sequence"));
        }
        Ok(Self {
            frames,
            dim,
            frame_shift_ms,
        })
    }

    /// Builds a sequence from individual frame vectors.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], frame_shift_ms: f32) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut frames = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dimension {
                    context: "latent row",
                    expected: dim,
                    actual: row.len(),
                });
            }
            frames.extend_from_slice(row);
        }
        Self::new(frames, dim, frame_shift_ms)
    }

    pub fn len(&self) -> usize {
        self.frames.len() / self.dim
    }

    /// Always false: a latent sequence holds at least one frame.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_shift_ms(&self) -> f32 {
        self.frame_shift_ms
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.frames.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.frames
    }

    /// Frames widened to 64-bit rows, the form consumed by the classifier.
    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        self.frames()
            .map(|f| f.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }
}

/// Ordered label inventory with a designated blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub blank_index: usize,
    pub labels: Vec<String>,
}

impl Vocabulary {
    pub fn new(labels: Vec<String>, blank_index: usize) -> Result<Self> {
        let vocab = Self {
            blank_index,
            labels,
        };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Vocabulary("no labels".into()));
        }
        if self.blank_index >= self.labels.len() {
            return Err(Error::Vocabulary(format!(
                "blank index {} outside {} labels",
                self.blank_index,
                self.labels.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for label in &self.labels {
            if label.is_empty() {
                return Err(Error::Vocabulary("empty label string".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::Vocabulary(format!("duplicate label {label:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    /// `size` labels named `<b>` (the blank, at index 0) and `wp1 .. wp{size-1}`.
    pub fn synthetic(size: usize) -> Result<Self> {
        let labels = (0..size)
            .map(|i| {
                if i == 0 {
                    "<b>".to_string()
                } else {
                    format!("wp{i}")
                }
            })
            .collect();
        Self::new(labels, 0)
    }
}

/// Linear map from latent frames to label logits (`V x D` weights plus bias).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    weights: Vec<f32>,
    bias: Vec<f32>,
    dim: usize,
}

impl ProjectionMatrix {
    pub fn new(weights: Vec<f32>, bias: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || bias.is_empty() {
            return Err(Error::Empty("projection"));
        }
        if weights.len() != bias.len() * dim {
            return Err(Error::Dimension {
                context: "projection weights",
                expected: bias.len() * dim,
                actual: weights.len(),
            });
        }
        if weights.iter().chain(&bias).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projection"));
        }
        Ok(Self { weights, bias, dim })
    }

    /// Projection with a zero bias.
    pub fn without_bias(weights: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("projection"));
        }
        let labels = weights.len() / dim;
        Self::new(weights, vec![0.0; labels], dim)
    }

    pub fn num_labels(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn row(&self, label: usize) -> &[f32] {
        &self.weights[label * self.dim..(label + 1) * self.dim]
    }

    fn logits_into(&self, frame: &[f32], out: &mut [f64]) {
        for (v, slot) in out.iter_mut().enumerate() {
            let dot: f64 = self
                .row(v)
                .iter()
                .zip(frame)
                .map(|(&w, &x)| f64::from(w) * f64::from(x))
                .sum();
            *slot = dot + f64::from(self.bias[v]);
        }
    }
}

/// Row-stochastic `T x V` matrix of per-frame label posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    num_labels: usize,
}

impl PosteriorGrid {
    /// Wraps an explicit probability matrix. Each row must sum to one within 1e-6.
    pub fn from_probs(probs: Vec<f64>, num_labels: usize) -> Result<Self> {
        if num_labels == 0 || probs.is_empty() {
            return Err(Error::Empty("posterior grid"));
        }
        if !probs.len().is_multiple_of(num_labels) {
            return Err(Error::Dimension {
                context: "posterior grid",
                expected: num_labels,
                actual: probs.len() % num_labels,
            });
        }
        for (t, row) in probs.chunks_exact(num_labels).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
                return Err(Error::Grid(format!("row {t} has a value outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Grid(format!("row {t} sums to {sum}")));
            }
        }
        let log_probs = probs.iter().map(|&p| p.max(PROB_FLOOR).ln()).collect();
        Ok(Self {
            probs,
            log_probs,
            num_labels,
        })
    }

    /// Row-wise softmax of a `T x V` logit matrix.
    pub fn from_logits(logits: &[f64], num_labels: usize) -> Result<Self> {
        if num_labels == 0 || logits.is_empty() {
            return Err(Error::Empty("posterior grid"));
        }
        if !logits.len().is_multiple_of(num_labels) {
            return Err(Error::Dimension {
                context: "logit matrix",
                expected: num_labels,
                actual: logits.len() % num_labels,
            });
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        let mut probs = Vec::with_capacity(logits.len());
        let mut log_probs = Vec::with_capacity(logits.len());
        for row in logits.chunks_exact(num_labels) {
            softmax_row(row, &mut probs, &mut log_probs);
        }
        Ok(Self {
            probs,
            log_probs,
            num_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.num_labels
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn probs(&self, t: usize) -> &[f64] {
        &self.probs[t * self.num_labels..(t + 1) * self.num_labels]
    }

    pub fn log_probs(&self, t: usize) -> &[f64] {
        &self.log_probs[t * self.num_labels..(t + 1) * self.num_labels]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.probs.chunks_exact(self.num_labels)
    }
}

fn softmax_row(logits: &[f64], probs: &mut Vec<f64>, log_probs: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_norm = sum.ln();
    for &l in logits {
        let shifted = l - max;
        probs.push(shifted.exp() / sum);
        log_probs.push((shifted - log_norm).max(PROB_FLOOR.ln()));
    }
}

/// Per-frame argmax labels and their posterior scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePath {
    pub arg_labels: Vec<usize>,
    pub arg_scores: Vec<f64>,
}

impl FramePath {
    pub fn len(&self) -> usize {
        self.arg_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arg_labels.is_empty()
    }
}

/// Per-frame softmax of `proj · y_t + bias`.
pub fn project_softmax(seq: &LatentSequence, proj: &ProjectionMatrix) -> Result<PosteriorGrid> {
    if seq.dim() != proj.dim() {
        return Err(Error::Dimension {
            context: "projection input",
            expected: proj.dim(),
            actual: seq.dim(),
        });
    }
    let v = proj.num_labels();
    let mut logits = vec![0.0; seq.len() * v];
    for (frame, out) in seq.frames().zip(logits.chunks_exact_mut(v)) {
        proj.logits_into(frame, out);
    }
    PosteriorGrid::from_logits(&logits, v)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn frame_argmax(grid: &PosteriorGrid) -> FramePath {
    let (arg_labels, arg_scores) = grid
        .rows()
        .map(|row| {
            let best = argmax(row);
            (best, row[best])
        })
        .unzip();
    FramePath {
        arg_labels,
        arg_scores,
    }
}
