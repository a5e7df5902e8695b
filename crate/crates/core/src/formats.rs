//! On-disk formats. All integers and floats are little-endian.
//!
//! `.lseq`: `"CTSQ"`, version `u16`, `T: u32`, `D: u32`, `frame_shift_ms: f32`,
//! then `T*D` `f32` values row-major.
//!
//! `.proj`: `"CTSP"`, version `u16`, `V: u32`, `D: u32`, `V*D` weights
//! row-major, then `V` bias values.
//!
//! `.sseq`: an `.lseq` image of the `S` selected vectors followed by `S`
//! segment records `start, end, label, rep_frame` (`u32` each) and
//! `rep_score` (`f32`).

use std::fs;
use std::path::Path;

use crate::cts::{Segment, SummarizedSequence};
use crate::error::{Error, Result};
use crate::seqcore::{LatentSequence, ProjectionMatrix, Vocabulary};

pub const LSEQ_MAGIC: &[u8; 4] = b"CTSQ";
pub const PROJ_MAGIC: &[u8; 4] = b"CTSP";
pub const FORMAT_VERSION: u16 = 1;

const SEGMENT_RECORD_BYTES: usize = 20;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Self { buf, pos: 0, kind }
    }

    pub(crate) fn error(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            kind: self.kind,
            reason: reason.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated at byte {}: need {n} more, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(self.error(format!("bad magic {got:?}")));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let v = self.u16()?;
        if v != FORMAT_VERSION {
            return Err(self.error(format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| self.error("size overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_lseq(seq: &LatentSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + seq.as_slice().len() * 4);
    out.extend_from_slice(LSEQ_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, seq.len());
    put_u32(&mut out, seq.dim());
    out.extend_from_slice(&seq.frame_shift_ms().to_le_bytes());
    put_f32s(&mut out, seq.as_slice());
    out
}

fn read_lseq_body(r: &mut Reader) -> Result<LatentSequence> {
    r.magic(LSEQ_MAGIC)?;
    r.version()?;
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    let shift = r.f32()?;
    let frames = r.f32s(t * d)?;
    LatentSequence::new(frames, d, shift)
}

pub fn decode_lseq(bytes: &[u8]) -> Result<LatentSequence> {
    let mut r = Reader::new(bytes, "lseq");
    let seq = read_lseq_body(&mut r)?;
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    Ok(seq)
}

pub fn encode_sseq(summary: &SummarizedSequence) -> Vec<u8> {
    let mut out = encode_lseq(&summary.vectors);
    for seg in &summary.segments {
        put_u32(&mut out, seg.start);
        put_u32(&mut out, seg.end);
        put_u32(&mut out, seg.label);
        put_u32(&mut out, seg.rep_frame);
        out.extend_from_slice(&(seg.rep_score as f32).to_le_bytes());
    }
    out
}

/// Parses a `.sseq` image. `source_len` is recovered as the end of the last
/// segment, which equals the original frame count unless trailing blank
/// segments were dropped.
pub fn decode_sseq(bytes: &[u8]) -> Result<SummarizedSequence> {
    let mut r = Reader::new(bytes, "sseq");
    let vectors = read_lseq_body(&mut r)?;
    let s = vectors.len();
    if r.remaining() != s * SEGMENT_RECORD_BYTES {
        return Err(r.error(format!(
            "segment table holds {} bytes, expected {}",
            r.remaining(),
            s * SEGMENT_RECORD_BYTES
        )));
    }
    let mut segments = Vec::with_capacity(s);
    for _ in 0..s {
        let seg = Segment {
            start: r.u32()? as usize,
            end: r.u32()? as usize,
            label: r.u32()? as usize,
            rep_frame: r.u32()? as usize,
            rep_score: f64::from(r.f32()?),
        };
        if !(seg.start <= seg.rep_frame && seg.rep_frame < seg.end) {
            return Err(r.error(format!("inconsistent segment {seg:?}")));
        }
        if segments.last().is_some_and(|p: &Segment| p.end > seg.start) {
            return Err(r.error("segments overlap or are out of order"));
        }
        segments.push(seg);
    }
    let source_len = segments.last().map_or(0, |s| s.end);
    Ok(SummarizedSequence {
        vectors,
        segments,
        source_len,
    })
}

/// A latent file of either kind; `.sseq` images carry a segment table.
pub enum LatentFile {
    Frames(LatentSequence),
    Summary(SummarizedSequence),
}

impl LatentFile {
    pub fn sequence(&self) -> &LatentSequence {
        match self {
            LatentFile::Frames(seq) => seq,
            LatentFile::Summary(summary) => &summary.vectors,
        }
    }
}

pub fn decode_latent_any(bytes: &[u8]) -> Result<LatentFile> {
    let mut r = Reader::new(bytes, "lseq");
    read_lseq_body(&mut r)?;
    if r.remaining() == 0 {
        decode_lseq(bytes).map(LatentFile::Frames)
    } else {
        decode_sseq(bytes).map(LatentFile::Summary)
    }
}

pub fn encode_proj(proj: &ProjectionMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PROJ_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, proj.num_labels());
    put_u32(&mut out, proj.dim());
    put_f32s(&mut out, proj.weights());
    put_f32s(&mut out, proj.bias());
    out
}

pub fn decode_proj(bytes: &[u8]) -> Result<ProjectionMatrix> {
    let mut r = Reader::new(bytes, "proj");
    r.magic(PROJ_MAGIC)?;
    r.version()?;
    let v = r.u32()? as usize;
    let d = r.u32()? as usize;
    let weights = r.f32s(v * d)?;
    let bias = r.f32s(v)?;
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    ProjectionMatrix::new(weights, bias, d)
}

pub fn read_lseq(path: impl AsRef<Path>) -> Result<LatentSequence> {
    decode_lseq(&fs::read(path)?)
}

pub fn write_lseq(path: impl AsRef<Path>, seq: &LatentSequence) -> Result<()> {
    Ok(fs::write(path, encode_lseq(seq))?)
}

pub fn read_sseq(path: impl AsRef<Path>) -> Result<SummarizedSequence> {
    decode_sseq(&fs::read(path)?)
}

pub fn write_sseq(path: impl AsRef<Path>, summary: &SummarizedSequence) -> Result<()> {
    Ok(fs::write(path, encode_sseq(summary))?)
}

pub fn read_latent_any(path: impl AsRef<Path>) -> Result<LatentFile> {
    decode_latent_any(&fs::read(path)?)
}

pub fn read_proj(path: impl AsRef<Path>) -> Result<ProjectionMatrix> {
    decode_proj(&fs::read(path)?)
}

pub fn write_proj(path: impl AsRef<Path>, proj: &ProjectionMatrix) -> Result<()> {
    Ok(fs::write(path, encode_proj(proj))?)
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let vocab: Vocabulary = serde_json::from_slice(&fs::read(path)?)?;
    vocab.validate()?;
    Ok(vocab)
}

pub fn write_vocab(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
    let mut text = serde_json::to_string(vocab)?;
    text.push('\n');
    Ok(fs::write(path, text)?)
}
