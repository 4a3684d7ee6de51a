//! Dialogue data model: conversations of actor-tagged turns with dialogue
//! acts and slot annotations, plus the file format, vocabulary construction,
//! dialogue-act augmentation, session assembly and the synthetic generator.

pub mod augment;
pub mod format;
pub mod session;
pub mod synth;
pub mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::augment_dialogue_acts;
pub use format::{parse_corpus, parse_corpus_str, serialize_corpus, write_corpus};
pub use session::{assemble_session, SessionOptions, TokenizedSession};
pub use synth::{generate_nbest, generate_synthetic, NbestGenConfig, SynthConfig};
pub use vocab::{build_vocab, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    User,
    Bot,
}

/// Slot annotation on the tokenized turn text: token span `[start, end)`
/// carrying a tag from the corpus header's declared set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub start: usize,
    pub end: usize,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub actor: Actor,
    pub text: String,
    pub dialogue_act: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slot_spans: Vec<SlotSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

/// First line of a corpus file: schema version plus the closed label sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub schema_version: u32,
    pub dialogue_acts: Vec<String>,
    pub slot_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub conversations: Vec<Conversation>,
}

/// Whitespace tokenization on lowercased text. Deterministic and reversible,
/// which is all the synthetic corpora need.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

impl Turn {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }

    /// Spans must be sorted-compatible, non-overlapping and inside the
    /// tokenized text.
    pub fn validate_spans(&self) -> Result<()> {
        let n = self.tokens().len();
        let mut spans = self.slot_spans.clone();
        spans.sort_by_key(|s| (s.start, s.end));
        let mut prev_end = 0usize;
        for s in &spans {
            if s.start >= s.end {
                return Err(Error::data(format!(
                    "empty slot span ({}, {})",
                    s.start, s.end
                )));
            }
            if s.end > n {
                return Err(Error::data(format!(
                    "slot span ({}, {}) outside turn of {} tokens",
                    s.start, s.end, n
                )));
            }
            if s.start < prev_end {
                return Err(Error::data(format!(
                    "overlapping slot spans at token {}",
                    s.start
                )));
            }
            prev_end = s.end;
        }
        Ok(())
    }
}

impl Conversation {
    pub fn validate(&self, header: &CorpusHeader) -> Result<()> {
        if !self.turns.iter().any(|t| t.actor == Actor::User) {
            return Err(Error::data(format!(
                "conversation {} has no user turn",
                self.id
            )));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if !header.dialogue_acts.contains(&turn.dialogue_act) {
                return Err(Error::data(format!(
                    "conversation {} turn {}: unknown dialogue act {:?}; declared set: {:?}",
                    self.id, i, turn.dialogue_act, header.dialogue_acts
                )));
            }
            for span in &turn.slot_spans {
                if !header.slot_tags.contains(&span.tag) {
                    return Err(Error::data(format!(
                        "conversation {} turn {}: unknown slot tag {:?}; declared set: {:?}",
                        self.id, i, span.tag, header.slot_tags
                    )));
                }
            }
            turn.validate_spans().map_err(|e| {
                Error::data(format!("conversation {} turn {}: {e}", self.id, i))
            })?;
        }
        Ok(())
    }
}

impl Corpus {
    pub fn validate(&self) -> Result<()> {
        for conv in &self.conversations {
            conv.validate(&self.header)?;
        }
        Ok(())
    }

    /// Slot classes: 0 is reserved for "not a slot", tags map to 1-based ids
    /// in header order.
    pub fn n_slot_classes(&self) -> usize {
        self.header.slot_tags.len() + 1
    }

    pub fn slot_class(&self, tag: &str) -> Option<usize> {
        self.header
            .slot_tags
            .iter()
            .position(|t| t == tag)
            .map(|i| i + 1)
    }
}
