//! Conversational language-model rescoring toolkit.
//!
//! A Transformer-XL decoder with segment-level recurrence carries context
//! across the turns of a task-oriented dialogue; optional heads add
//! dialogue-act conditioning, a joint slot-detection objective whose logits
//! feed back into the next-word distribution, and a fusion layer that adapts
//! the model on-the-fly with an external domain embedding. Around the model:
//! a synthetic dialogue corpus generator, an n-best rescoring engine that
//! combines acoustic and LM scores per session, and an evaluation harness
//! for perplexity, WER/content-WER, slot F1 and matched-pairs significance.
//!
//! Start with the runnable examples (`cargo run --example`) or the `convlm`
//! binary's `generate`/`train`/`rescore`/`evaluate`/`embed` subcommands.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod rescoring;
pub mod training;

pub use error::{Error, Result};
