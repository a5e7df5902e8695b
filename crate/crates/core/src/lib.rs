//! Connectionist temporal summarization (CTS) of latent acoustic sequences,
//! CTC best-path decoding and scoring, a from-scratch bidirectional GRU intent
//! classifier, a synthetic corpus generator, and a harness comparing a
//! decode-then-classify pipeline with two end-to-end variants.

pub mod ctc;
pub mod cts;
pub mod error;
pub mod formats;
pub mod harness;
pub mod lu;
pub mod seqcore;
pub mod synth;

pub use error::{Error, Result};
