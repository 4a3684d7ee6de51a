//! Session assembly: one conversation becomes a single token stream with
//! per-position slot labels and a loss mask, each turn preceded by its actor
//! control token. Cross-turn context carry-over falls out of the model
//! consuming this stream in segments.

use crate::corpus::augment::DA_PREFIX_LEN;
use crate::corpus::vocab::{DA_CLOSE, DA_OPEN, TURN_BOT, TURN_USER};
use crate::corpus::{Actor, Conversation, Corpus, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SessionOptions {
    /// Score bot-turn words in the LM loss.
    pub loss_on_bot: bool,
    /// Score the dialogue-act prefix tokens in the LM loss.
    pub loss_on_da: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        // The models train on concatenated turns including bot responses;
        // the act-tag prefix is context, not a prediction target.
        SessionOptions {
            loss_on_bot: true,
            loss_on_da: false,
        }
    }
}

/// Tokenized conversation stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSession {
    pub token_ids: Vec<u32>,
    /// Slot class per position, 0 for "not a slot" and for control tokens.
    pub slot_labels: Vec<u8>,
    /// Positions whose token counts toward the LM loss.
    pub loss_mask: Vec<bool>,
    /// Index of each turn's actor control token.
    pub turn_boundaries: Vec<usize>,
    /// Out-of-vocabulary substitutions made while encoding.
    pub unk_count: usize,
}

impl TokenizedSession {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Concatenate the conversation's turns into one stream. Each turn is
/// `[actor-token, words...]`; the loss mask covers user words always, bot
/// words iff `loss_on_bot`, and the `<da> act </da>` prefix iff `loss_on_da`.
pub fn assemble_session(
    conv: &Conversation,
    corpus: &Corpus,
    vocab: &Vocabulary,
    opts: SessionOptions,
) -> Result<TokenizedSession> {
    let mut session = TokenizedSession {
        token_ids: Vec::new(),
        slot_labels: Vec::new(),
        loss_mask: Vec::new(),
        turn_boundaries: Vec::new(),
        unk_count: 0,
    };
    let da_open = vocab
        .id(DA_OPEN)
        .ok_or_else(|| Error::config("vocabulary lacks reserved tokens".to_string()))?;
    let da_close = vocab.id(DA_CLOSE).expect("reserved token");
    for turn in &conv.turns {
        let actor_tok = match turn.actor {
            Actor::User => TURN_USER,
            Actor::Bot => TURN_BOT,
        };
        session.turn_boundaries.push(session.token_ids.len());
        session.token_ids.push(vocab.id(actor_tok).expect("reserved token"));
        session.slot_labels.push(0);
        session.loss_mask.push(false);

        let (ids, unk) = vocab.encode(&turn.text);
        session.unk_count += unk;
        let word_mask = match turn.actor {
            Actor::User => true,
            Actor::Bot => opts.loss_on_bot,
        };
        // Detect the act-tag prefix so its three tokens stay control-like.
        let has_da_prefix = ids.len() >= DA_PREFIX_LEN && ids[0] == da_open && ids[2] == da_close;
        let mut labels = vec![0u8; ids.len()];
        for span in &turn.slot_spans {
            let class = corpus.slot_class(&span.tag).ok_or_else(|| {
                Error::data(format!("slot tag {:?} missing from corpus header", span.tag))
            })?;
            let end = span.end.min(ids.len());
            for label in &mut labels[span.start..end] {
                *label = class as u8;
            }
        }
        for (i, (&id, &label)) in ids.iter().zip(&labels).enumerate() {
            let in_da_prefix = has_da_prefix && i < DA_PREFIX_LEN;
            session.token_ids.push(id);
            session.slot_labels.push(if in_da_prefix { 0 } else { label });
            session
                .loss_mask
                .push(if in_da_prefix { opts.loss_on_da } else { word_mask });
        }
    }
    debug_assert_eq!(session.token_ids.len(), session.slot_labels.len());
    debug_assert_eq!(session.token_ids.len(), session.loss_mask.len());
    Ok(session)
}
