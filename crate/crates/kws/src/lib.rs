//! Keyword spotting toolkit.
//!
//! A transformer phonetic encoder is trained jointly with one of three
//! keyword-spotting heads (a cross-attention decoder over a trainable query
//! sequence, a conventional split-branch head, or a BLSTM decoder) under a
//! multi-task objective that mixes phonetic CTC loss on ASR-labeled
//! utterances with a phrase-level loss on KWS-labeled utterances.
//!
//! Everything runs on a small self-contained f64 stack: a tape-based
//! reverse-mode autodiff engine, a log-mel audio frontend, a synthetic
//! corpus generator, a deterministic single-threaded trainer, and a
//! DET-curve evaluation harness. No GPU, no external frameworks.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod features;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use tensor::Tensor;
