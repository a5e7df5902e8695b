//! CTC best-path decoding and forward scoring.
//!
//! [`greedy_decode`] takes the per-frame argmax, merges repeats and drops
//! blanks. [`ctc_forward_logprob`] sums the probability of every alignment of
//! a target through the blank-interleaved state lattice in log space;
//! [`enumerate_alignments_logprob`] computes the same quantity by brute force
//! for small instances and exists to check the recursion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqcore::{frame_argmax, FramePath, PosteriorGrid, Vocabulary};

/// Largest `T` accepted by the exhaustive oracle.
pub const ENUM_MAX_FRAMES: usize = 10;
/// Largest `V` accepted by the exhaustive oracle.
pub const ENUM_MAX_LABELS: usize = 5;

/// A collapsed label sequence with an optional log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub ids: Vec<usize>,
    pub score: Option<f64>,
}

impl LabelSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids, score: None }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn labels<'a>(&self, vocab: &'a Vocabulary) -> Vec<&'a str> {
        self.ids
            .iter()
            .map(|&id| vocab.label(id).unwrap_or("?"))
            .collect()
    }
}

/// Merge consecutive repeats, then drop blanks.
pub fn collapse_path(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &label in labels {
        if prev != Some(label) && label != blank {
            out.push(label);
        }
        prev = Some(label);
    }
    out
}

fn check_vocab(grid: &PosteriorGrid, vocab: &Vocabulary) -> Result<()> {
    vocab.validate()?;
    if grid.num_labels() != vocab.len() {
        return Err(Error::Dimension {
            context: "grid labels vs vocabulary",
            expected: vocab.len(),
            actual: grid.num_labels(),
        });
    }
    Ok(())
}

/// Decode a precomputed argmax path. The score is the sum of the log
/// argmax scores, floored like the grid's log-probabilities.
pub fn decode_path(path: &FramePath, blank: usize) -> LabelSequence {
    let score = path
        .arg_scores
        .iter()
        .map(|&p| p.max(crate::seqcore::PROB_FLOOR).ln())
        .sum();
    LabelSequence {
        ids: collapse_path(&path.arg_labels, blank),
        score: Some(score),
    }
}

pub fn greedy_decode(grid: &PosteriorGrid, vocab: &Vocabulary) -> Result<LabelSequence> {
    check_vocab(grid, vocab)?;
    Ok(decode_path(&frame_argmax(grid), vocab.blank_index))
}

fn check_target(target: &LabelSequence, vocab: &Vocabulary) -> Result<()> {
    for (pos, &id) in target.ids.iter().enumerate() {
        if id == vocab.blank_index {
            return Err(Error::BlankInTarget(pos));
        }
        if id >= vocab.len() {
            return Err(Error::LabelOutOfRange {
                label: id,
                size: vocab.len(),
            });
        }
    }
    Ok(())
}

/// Minimum number of frames able to emit `ids`: one per label plus a
/// separating blank between each pair of equal neighbours.
pub fn min_frames(ids: &[usize]) -> usize {
    ids.len() + ids.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln P(target | grid)` summed over all CTC alignments.
///
/// Returns `f64::NEG_INFINITY` (not an error) when the grid has too few
/// frames for the target.
pub fn ctc_forward_logprob(
    grid: &PosteriorGrid,
    target: &LabelSequence,
    vocab: &Vocabulary,
) -> Result<f64> {
    check_vocab(grid, vocab)?;
    check_target(target, vocab)?;
    let blank = vocab.blank_index;
    let frames = grid.len();
    if frames < min_frames(&target.ids) {
        return Ok(f64::NEG_INFINITY);
    }

    let mut states = Vec::with_capacity(2 * target.len() + 1);
    states.push(blank);
    for &id in &target.ids {
        states.push(id);
        states.push(blank);
    }
    let n = states.len();

    let mut alpha = vec![f64::NEG_INFINITY; n];
    let lp0 = grid.log_probs(0);
    alpha[0] = lp0[blank];
    if n > 1 {
        alpha[1] = lp0[states[1]];
    }
    let mut next = vec![f64::NEG_INFINITY; n];
    for t in 1..frames {
        let lp = grid.log_probs(t);
        for s in 0..n {
            let mut acc = alpha[s];
            if s >= 1 {
                acc = log_add(acc, alpha[s - 1]);
            }
            if s >= 2 && states[s] != blank && states[s] != states[s - 2] {
                acc = log_add(acc, alpha[s - 2]);
            }
            next[s] = if acc == f64::NEG_INFINITY {
                acc
            } else {
                acc + lp[states[s]]
            };
        }
        std::mem::swap(&mut alpha, &mut next);
    }

    Ok(if n == 1 {
        alpha[0]
    } else {
        log_add(alpha[n - 1], alpha[n - 2])
    })
}

/// Brute-force counterpart of [`ctc_forward_logprob`]: visits all `V^T`
/// label paths and sums, in plain probability space, those that collapse to
/// the target.
pub fn enumerate_alignments_logprob(
    grid: &PosteriorGrid,
    target: &LabelSequence,
    vocab: &Vocabulary,
) -> Result<f64> {
    check_vocab(grid, vocab)?;
    check_target(target, vocab)?;
    let (frames, labels) = (grid.len(), grid.num_labels());
    if frames > ENUM_MAX_FRAMES || labels > ENUM_MAX_LABELS {
        return Err(Error::TooLarge(format!(
            "T={frames}, V={labels} (limits T<={ENUM_MAX_FRAMES}, V<={ENUM_MAX_LABELS})"
        )));
    }

    let mut path = vec![0usize; frames];
    let mut total = 0.0f64;
    loop {
        if collapse_path(&path, vocab.blank_index) == target.ids {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &v)| grid.probs(t)[v])
                .product::<f64>();
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == frames {
                return Ok(total.ln());
            }
            path[pos] += 1;
            if path[pos] < labels {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}
