//! Multitask training for low-resource abstractive summarization.
//!
//! A shared encoder is trained with an abstractive summarization decoder
//! plus any combination of auxiliary tasks (extractive labeling, concept
//! detection, paraphrase detection, masked language modeling), either with
//! separate task heads or as one text-to-text model. The experiment harness
//! sweeps auxiliary-task combinations and reports ROUGE deltas against the
//! single-task baseline.

pub mod corpus;
pub mod decode;
pub mod error;
pub mod experiments;
pub mod model;
pub mod rouge;
pub mod synthetic;
pub mod tasks;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
