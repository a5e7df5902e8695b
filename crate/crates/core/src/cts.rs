//! Connectionist temporal summarization.
//!
//! Frames are grouped into maximal runs sharing the same per-frame argmax
//! label under the CTC projection. Each run is replaced by the single source
//! frame whose argmax score is highest inside it, so the output is a selection
//! of input frames, never a blend. Blank runs are kept by default.

use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::seqcore::{frame_argmax, project_softmax, FramePath, LatentSequence, ProjectionMatrix};

/// A maximal run of frames `[start, end)` sharing one argmax label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// A run together with its representative frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
    pub rep_frame: usize,
    pub rep_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummarizedSequence {
    /// One row per segment, copied from the source frame at `rep_frame`.
    pub vectors: LatentSequence,
    pub segments: Vec<Segment>,
    pub source_len: usize,
}

impl SummarizedSequence {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SummarizeOptions {
    /// Remove blank-labelled segments from the output (ablation only).
    pub drop_blank_segments: bool,
    pub blank_index: usize,
}

/// Run-length encode the argmax path.
pub fn segment_path(path: &FramePath) -> Result<Vec<Span>> {
    let labels = &path.arg_labels;
    if labels.is_empty() {
        return Err(Error::Empty("frame path"));
    }
    let mut spans = Vec::new();
    let mut start = 0;
    for t in 1..=labels.len() {
        if t == labels.len() || labels[t] != labels[start] {
            spans.push(Span {
                start,
                end: t,
                label: labels[start],
            });
            start = t;
        }
    }
    Ok(spans)
}

/// Pick, for each span, the earliest frame with the maximal argmax score.
pub fn select_representatives(
    spans: &[Span],
    path: &FramePath,
    seq: &LatentSequence,
) -> Result<SummarizedSequence> {
    if path.len() != seq.len() {
        return Err(Error::Dimension {
            context: "frame path vs latent sequence",
            expected: seq.len(),
            actual: path.len(),
        });
    }
    check_tiling(spans, seq.len())?;

    let mut segments = Vec::with_capacity(spans.len());
    let mut rows = Vec::with_capacity(spans.len() * seq.dim());
    for span in spans {
        let mut rep = span.start;
        for t in span.start + 1..span.end {
            if path.arg_scores[t] > path.arg_scores[rep] {
                rep = t;
            }
        }
        segments.push(Segment {
            start: span.start,
            end: span.end,
            label: span.label,
            rep_frame: rep,
            rep_score: path.arg_scores[rep],
        });
        rows.extend_from_slice(seq.frame(rep));
    }
    Ok(SummarizedSequence {
        vectors: LatentSequence::new(rows, seq.dim(), seq.frame_shift_ms())?,
        segments,
        source_len: seq.len(),
    })
}

fn check_tiling(spans: &[Span], len: usize) -> Result<()> {
    let mut cursor = 0;
    for span in spans {
        if span.start != cursor || span.end <= span.start {
            return Err(Error::Grid(format!(
                "segments do not tile [0, {len}): gap or overlap at frame {cursor}"
            )));
        }
        cursor = span.end;
    }
    if cursor != len {
        return Err(Error::Dimension {
            context: "segment coverage",
            expected: len,
            actual: cursor,
        });
    }
    Ok(())
}

/// `CTS(Y)`: project, take the argmax path, segment it, select representatives.
pub fn summarize(
    seq: &LatentSequence,
    proj: &ProjectionMatrix,
    options: SummarizeOptions,
) -> Result<SummarizedSequence> {
    let path = frame_argmax(&project_softmax(seq, proj)?);
    summarize_path(seq, &path, options)
}

/// Same as [`summarize`] for a caller that already holds the argmax path.
pub fn summarize_path(
    seq: &LatentSequence,
    path: &FramePath,
    options: SummarizeOptions,
) -> Result<SummarizedSequence> {
    let spans = segment_path(path)?;
    let summary = select_representatives(&spans, path, seq)?;
    if options.drop_blank_segments {
        Ok(drop_blanks(summary, options.blank_index))
    } else {
        Ok(summary)
    }
}

/// Removes blank segments. When every segment is blank the highest-scoring
/// one is kept so the result still has a frame.
fn drop_blanks(summary: SummarizedSequence, blank: usize) -> SummarizedSequence {
    let dim = summary.vectors.dim();
    let keep: Vec<usize> = {
        let non_blank: Vec<usize> = (0..summary.len())
            .filter(|&i| summary.segments[i].label != blank)
            .collect();
        if non_blank.is_empty() {
            let mut best = 0;
            for (i, seg) in summary.segments.iter().enumerate() {
                if seg.rep_score > summary.segments[best].rep_score {
                    best = i;
                }
            }
            vec![best]
        } else {
            non_blank
        }
    };
    let rows: Vec<f32> = keep
        .iter()
        .flat_map(|&i| summary.vectors.frame(i).iter().copied())
        .collect();
    SummarizedSequence {
        vectors: LatentSequence::new(rows, dim, summary.vectors.frame_shift_ms())
            .expect("subset of a valid sequence"),
        segments: keep.iter().map(|&i| summary.segments[i]).collect(),
        source_len: summary.source_len,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionStats {
    /// `T / S`
    pub ratio: f64,
    /// `S / L`, or plain `S` when the decode is empty.
    pub segments_per_label: f64,
    pub empty_decode: bool,
}

pub fn compression_stats(
    summary: &SummarizedSequence,
    decoded: &LabelSequence,
) -> CompressionStats {
    let s = summary.len() as f64;
    let empty_decode = decoded.is_empty();
    CompressionStats {
        ratio: summary.source_len as f64 / s,
        segments_per_label: if empty_decode {
            s
        } else {
            s / decoded.len() as f64
        },
        empty_decode,
    }
}
