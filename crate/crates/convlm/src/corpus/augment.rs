//! Dialogue-act augmentation: user turns gain an explicit three-token prefix
//! `<da> <act-label> </da>` so the model can condition on the turn's act.

use crate::corpus::vocab::{DA_CLOSE, DA_OPEN};
use crate::corpus::{Actor, Conversation};

/// Number of tokens the prefix adds to a user turn.
pub const DA_PREFIX_LEN: usize = 3;

/// When enabled, prefixes every user turn's text with the dialogue-act tag
/// triple and shifts its slot spans accordingly. Bot turns are untouched.
/// Disabled, it returns the conversation unchanged.
pub fn augment_dialogue_acts(conv: &Conversation, enabled: bool) -> Conversation {
    if !enabled {
        return conv.clone();
    }
    let mut out = conv.clone();
    for turn in &mut out.turns {
        if turn.actor != Actor::User {
            continue;
        }
        turn.text = format!("{DA_OPEN} {} {DA_CLOSE} {}", turn.dialogue_act, turn.text);
        for span in &mut turn.slot_spans {
            span.start += DA_PREFIX_LEN;
            span.end += DA_PREFIX_LEN;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SlotSpan, Turn};

    fn conv() -> Conversation {
        Conversation {
            id: "c1".into(),
            turns: vec![
                Turn {
                    actor: Actor::Bot,
                    text: "sure what is the order number".into(),
                    dialogue_act: "request".into(),
                    slot_spans: vec![],
                },
                Turn {
                    actor: Actor::User,
                    text: "my order number is abcdef".into(),
                    dialogue_act: "inform".into(),
                    slot_spans: vec![SlotSpan {
                        start: 1,
                        end: 2,
                        tag: "entity".into(),
                    }],
                },
            ],
            domain: None,
        }
    }

    #[test]
    fn user_turn_gains_three_token_prefix() {
        let out = augment_dialogue_acts(&conv(), true);
        assert_eq!(out.turns[1].text, "<da> inform </da> my order number is abcdef");
        // bot turn text untouched
        assert_eq!(out.turns[0].text, conv().turns[0].text);
    }

    #[test]
    fn disabled_is_identity() {
        let c = conv();
        assert_eq!(augment_dialogue_acts(&c, false), c);
    }

    #[test]
    fn spans_shift_by_prefix_length() {
        let out = augment_dialogue_acts(&conv(), true);
        assert_eq!(out.turns[1].slot_spans[0].start, 4);
        assert_eq!(out.turns[1].slot_spans[0].end, 5);
    }

    #[test]
    fn bot_token_count_preserved_user_grows_by_three() {
        let before = conv();
        let after = augment_dialogue_acts(&before, true);
        assert_eq!(before.turns[0].tokens().len(), after.turns[0].tokens().len());
        assert_eq!(
            before.turns[1].tokens().len() + DA_PREFIX_LEN,
            after.turns[1].tokens().len()
        );
    }
}
