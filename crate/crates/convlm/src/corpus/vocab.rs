use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus};
use crate::error::{Error, Result};

/// Reserved control tokens, in id order 0..=6.
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const DA_OPEN: &str = "<da>";
pub const DA_CLOSE: &str = "</da>";
pub const TURN_USER: &str = "<user>";
pub const TURN_BOT: &str = "<bot>";

pub const RESERVED: [&str; 7] = [UNK, BOS, EOS, DA_OPEN, DA_CLOSE, TURN_USER, TURN_BOT];

/// Bidirectional token/id map with dense ids: reserved control tokens first,
/// then dialogue-act label tokens, then corpus words by descending frequency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, ids }
    }

    /// Rebuild the lookup map after deserialization.
    pub fn rehydrate(&mut self) {
        self.ids = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Token id, substituting `<unk>` for out-of-vocabulary words.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(0)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn unk_id(&self) -> u32 {
        0
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Encode a text, counting unknown-word substitutions.
    pub fn encode(&self, text: &str) -> (Vec<u32>, usize) {
        let mut unk = 0;
        let ids = tokenize(text)
            .iter()
            .map(|t| match self.id(t) {
                Some(id) => id,
                None => {
                    unk += 1;
                    self.unk_id()
                }
            })
            .collect();
        (ids, unk)
    }
}

/// Build a vocabulary from a corpus: reserved tokens, then the dialogue-act
/// label set (lexicographic), then words by descending frequency with
/// lexicographic tie-breaks, truncated at `max_size`.
pub fn build_vocab(corpus: &Corpus, max_size: usize) -> Result<Vocabulary> {
    let mut acts: Vec<String> = corpus.header.dialogue_acts.clone();
    acts.sort();
    acts.dedup();
    let floor = RESERVED.len() + acts.len();
    if max_size <= floor {
        return Err(Error::config(format!(
            "vocabulary max_size {max_size} must exceed {floor} (reserved + dialogue-act tokens)"
        )));
    }

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(acts.iter().cloned());

    let mut counts: HashMap<String, u64> = HashMap::new();
    for conv in &corpus.conversations {
        for turn in &conv.turns {
            for tok in turn.tokens() {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
    }
    let mut words: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(w, _)| !tokens.contains(w))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (w, _) in words {
        if tokens.len() >= max_size {
            break;
        }
        tokens.push(w);
    }
    Ok(Vocabulary::from_tokens(tokens))
}
