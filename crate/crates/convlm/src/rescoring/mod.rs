//! Session-stateful n-best rescoring: hypotheses are scored against an
//! immutable snapshot of the conversation's memory, combined with their
//! first-pass acoustic scores, and only committed transcripts (top
//! hypothesis or bot response) advance the session.

pub mod nbest;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{DA_CLOSE, DA_OPEN, EOS, TURN_BOT, TURN_USER};
use crate::corpus::{Actor, Vocabulary};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::score::{advance_memory, forced_logprobs};
use crate::model::{LmModel, Memory};
use crate::numerics::Real;

pub use nbest::{
    read_nbest_file, read_rescored_file, write_nbest_file, write_rescored_file, HypothesisRecord,
    NBestRecord, RescoredHypothesis, RescoredRecord,
};

/// A first-pass hypothesis with its dense rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub text: String,
    pub acoustic_score: f64,
    pub first_pass_rank: usize,
}

/// End-of-turn factor included in every hypothesis's LM score so lengths
/// compare fairly. Session streams mark turn ends with the next turn's actor
/// token, so the probability of `<bot>` after a user turn is the trained
/// end-of-turn event; the reserved `<eos>` token is available for corpora
/// that train with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnTerminator {
    NextActorBot,
    Eos,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RescoreOptions {
    pub acoustic_scale: f64,
    pub lm_scale: f64,
    /// Divide LM scores by the hypothesis word count.
    pub length_normalize: bool,
    pub terminator: TurnTerminator,
    /// Which hypothesis feeds the session memory for the next turn.
    pub advance_with: AdvanceWith,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvanceWith {
    TopRescored,
    TopFirstPass,
}

impl Default for RescoreOptions {
    fn default() -> Self {
        RescoreOptions {
            acoustic_scale: 1.0,
            lm_scale: 1.0,
            length_normalize: false,
            terminator: TurnTerminator::NextActorBot,
            advance_with: AdvanceWith::TopRescored,
        }
    }
}

/// Per-conversation rescoring state. Memory evolves only through
/// [`Rescorer::advance_session`].
#[derive(Debug, Clone)]
pub struct SessionState<R: Real> {
    pub conversation_id: String,
    pub memory: Memory<R>,
    pub domain: Option<String>,
    pub turns_consumed: usize,
    embedding: Option<Vec<R>>,
}

#[derive(Debug, Clone)]
pub struct ScoredHypothesis {
    pub hypothesis: Hypothesis,
    pub lm_logprob: f64,
    pub combined_score: f64,
}

#[derive(Debug, Clone)]
pub struct RescoredTurn {
    /// Descending combined score; ties broken by first-pass rank.
    pub ranked: Vec<ScoredHypothesis>,
    pub warnings: Vec<String>,
}

/// Binds a model to the vocabulary and pipeline flags it was trained with.
pub struct Rescorer<'a, R: Real> {
    pub model: &'a LmModel<R>,
    pub vocab: &'a Vocabulary,
    /// Apply the dialogue-act prefix when records carry an act.
    pub da_enabled: bool,
    pub embeddings: Option<&'a EmbeddingTable>,
}

impl<'a, R: Real> Rescorer<'a, R> {
    pub fn new(
        model: &'a LmModel<R>,
        vocab: &'a Vocabulary,
        da_enabled: bool,
        embeddings: Option<&'a EmbeddingTable>,
    ) -> Self {
        Rescorer {
            model,
            vocab,
            da_enabled,
            embeddings,
        }
    }

    pub fn open_session(
        &self,
        conversation_id: &str,
        domain: Option<&str>,
    ) -> Result<SessionState<R>> {
        let embedding = if self.model.config.fusion.enabled() {
            let table = self.embeddings.ok_or_else(|| {
                Error::config("fusion model rescoring without an embedding table".to_string())
            })?;
            let tag = domain.ok_or_else(|| {
                Error::data(format!(
                    "conversation {conversation_id}: fusion model needs a domain tag"
                ))
            })?;
            Some(table.vector_as::<R>(tag).ok_or_else(|| {
                Error::data(format!(
                    "conversation {conversation_id}: domain {tag:?} is not registered"
                ))
            })?)
        } else {
            None
        };
        Ok(SessionState {
            conversation_id: conversation_id.to_string(),
            memory: self.model.empty_memory(),
            domain: domain.map(str::to_string),
            turns_consumed: 0,
            embedding,
        })
    }

    /// Turn text to token ids: `[actor, (<da> act </da>)?, words...]`.
    fn encode_turn(&self, text: &str, actor: Actor, act: Option<&str>) -> (Vec<u32>, usize) {
        let actor_tok = match actor {
            Actor::User => TURN_USER,
            Actor::Bot => TURN_BOT,
        };
        let mut tokens = vec![self.vocab.id(actor_tok).expect("reserved token")];
        if self.da_enabled && actor == Actor::User {
            if let Some(act) = act {
                tokens.push(self.vocab.id(DA_OPEN).expect("reserved token"));
                tokens.push(self.vocab.id_or_unk(act));
                tokens.push(self.vocab.id(DA_CLOSE).expect("reserved token"));
            }
        }
        let prefix_len = tokens.len();
        let (word_ids, _unk) = self.vocab.encode(text);
        tokens.extend(word_ids);
        (tokens, prefix_len)
    }

    fn terminator_id(&self, opts: &RescoreOptions) -> Option<u32> {
        match opts.terminator {
            TurnTerminator::NextActorBot => self.vocab.id(TURN_BOT),
            TurnTerminator::Eos => self.vocab.id(EOS),
            TurnTerminator::None => None,
        }
    }

    fn effective_memory(&self, state: &SessionState<R>) -> Memory<R> {
        if self.model.config.contextual {
            state.memory.clone()
        } else {
            self.model.empty_memory()
        }
    }

    /// Score and sort one n-best list against the session's current memory
    /// without mutating it. The LM score covers the hypothesis words plus
    /// the end-of-turn factor; actor and act-prefix tokens condition but are
    /// never scored, so scores are comparable across hypotheses.
    pub fn rescore_turn(
        &self,
        state: &SessionState<R>,
        record: &NBestRecord,
        opts: &RescoreOptions,
    ) -> Result<RescoredTurn> {
        record.validate()?;
        if record.conversation_id != state.conversation_id {
            return Err(Error::data(format!(
                "utterance {}: record belongs to conversation {}, session is {}",
                record.utterance_id, record.conversation_id, state.conversation_id
            )));
        }
        if record.turn_index < state.turns_consumed {
            return Err(Error::data(format!(
                "utterance {}: turn {} arrived after {} turns were consumed",
                record.utterance_id, record.turn_index, state.turns_consumed
            )));
        }
        let memory = self.effective_memory(state);
        let mut warnings = Vec::new();
        let mut scored = Vec::with_capacity(record.hypotheses.len());
        for (rank, hyp) in record.hypotheses.iter().enumerate() {
            let (mut tokens, prefix_len) =
                self.encode_turn(&hyp.text, record.actor, record.dialogue_act.as_deref());
            let n_words = tokens.len() - prefix_len;
            if n_words == 0 {
                warnings.push(format!(
                    "utterance {}: empty hypothesis at first-pass rank {rank}; scored as end-of-turn only",
                    record.utterance_id
                ));
            }
            if let Some(term) = self.terminator_id(opts) {
                tokens.push(term);
            }
            let lm_logprob = if tokens.len() < 2 {
                0.0
            } else {
                let inputs = &tokens[..tokens.len() - 1];
                let targets = &tokens[1..];
                let (lps, _) = forced_logprobs(
                    self.model,
                    inputs,
                    targets,
                    &memory,
                    state.embedding.as_deref(),
                )?;
                // Targets before `prefix_len - 1` are prefix tokens (given,
                // not predicted); everything after is words + terminator.
                lps.iter().skip(prefix_len - 1).sum()
            };
            let lm_used = if opts.length_normalize && n_words > 0 {
                lm_logprob / n_words as f64
            } else {
                lm_logprob
            };
            scored.push(ScoredHypothesis {
                hypothesis: Hypothesis {
                    text: hyp.text.clone(),
                    acoustic_score: hyp.acoustic_score,
                    first_pass_rank: rank,
                },
                lm_logprob,
                combined_score: opts.acoustic_scale * hyp.acoustic_score + opts.lm_scale * lm_used,
            });
        }
        scored.sort_by(|a, b| {
            b.combined_score
                .total_cmp(&a.combined_score)
                .then(a.hypothesis.first_pass_rank.cmp(&b.hypothesis.first_pass_rank))
        });
        Ok(RescoredTurn {
            ranked: scored,
            warnings,
        })
    }

    /// Commit a transcript: forced forward pass over the encoded turn
    /// updates the memory and the turn counter.
    pub fn advance_session(
        &self,
        mut state: SessionState<R>,
        chosen_text: &str,
        actor: Actor,
        act: Option<&str>,
    ) -> Result<SessionState<R>> {
        if self.model.config.contextual {
            let (tokens, _) = self.encode_turn(chosen_text, actor, act);
            state.memory =
                advance_memory(self.model, &tokens, &state.memory, state.embedding.as_deref())?;
        }
        state.turns_consumed += 1;
        Ok(state)
    }
}

/// Rescore a full n-best file: conversations stream in order, each with its
/// own session; bot records advance the session, user records are rescored
/// and then committed per `opts.advance_with`.
pub fn rescore_stream<R: Real>(
    rescorer: &Rescorer<R>,
    records: &[NBestRecord],
    opts: &RescoreOptions,
    mut warn: impl FnMut(&str),
) -> Result<Vec<RescoredRecord>> {
    let mut sessions: HashMap<String, SessionState<R>> = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        if !sessions.contains_key(&record.conversation_id) {
            let state =
                rescorer.open_session(&record.conversation_id, record.domain.as_deref())?;
            sessions.insert(record.conversation_id.clone(), state);
        }
        let state = sessions
            .remove(&record.conversation_id)
            .expect("inserted above");
        if record.actor == Actor::Bot {
            let text = record.hypotheses[0].text.clone();
            let state = rescorer.advance_session(state, &text, Actor::Bot, None)?;
            sessions.insert(record.conversation_id.clone(), state);
            continue;
        }
        let turn = rescorer.rescore_turn(&state, record, opts)?;
        for w in &turn.warnings {
            warn(w);
        }
        // annotate hypotheses in original first-pass order
        let mut hyps = vec![None; turn.ranked.len()];
        for (new_rank, sh) in turn.ranked.iter().enumerate() {
            hyps[sh.hypothesis.first_pass_rank] = Some(RescoredHypothesis {
                text: sh.hypothesis.text.clone(),
                acoustic_score: sh.hypothesis.acoustic_score,
                lm_logprob: sh.lm_logprob,
                combined_score: sh.combined_score,
                new_rank,
            });
        }
        out.push(RescoredRecord {
            utterance_id: record.utterance_id.clone(),
            conversation_id: record.conversation_id.clone(),
            turn_index: record.turn_index,
            actor: record.actor,
            dialogue_act: record.dialogue_act.clone(),
            reference: record.reference.clone(),
            hypotheses: hyps.into_iter().map(|h| h.expect("dense ranks")).collect(),
        });
        let chosen = match opts.advance_with {
            AdvanceWith::TopRescored => turn.ranked[0].hypothesis.text.clone(),
            AdvanceWith::TopFirstPass => record.hypotheses[0].text.clone(),
        };
        let state = rescorer.advance_session(
            state,
            &chosen,
            Actor::User,
            record.dialogue_act.as_deref(),
        )?;
        sessions.insert(record.conversation_id.clone(), state);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, generate_synthetic, SynthConfig};
    use crate::model::{init_model, Arch, ModelConfig};

    fn setup() -> (LmModel<f32>, Vocabulary) {
        let mut synth = SynthConfig::two_domain_default();
        synth.n_conversations = 20;
        let corpus = generate_synthetic(&synth, 1).unwrap();
        let vocab = build_vocab(&corpus, 500).unwrap();
        let config = ModelConfig {
            arch: Arch::Txl,
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            vocab_size: vocab.len(),
            dropout: 0.0,
            ..ModelConfig::default()
        };
        (init_model(&config, 3).unwrap(), vocab)
    }

    fn record(conv: &str, turn: usize, texts: &[&str]) -> NBestRecord {
        NBestRecord {
            utterance_id: format!("{conv}-t{turn}"),
            conversation_id: conv.to_string(),
            turn_index: turn,
            actor: Actor::User,
            domain: None,
            dialogue_act: Some("inform".to_string()),
            reference: Some(texts[0].to_string()),
            hypotheses: texts
                .iter()
                .enumerate()
                .map(|(i, t)| HypothesisRecord {
                    text: t.to_string(),
                    acoustic_score: -0.1 * i as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn open_session_starts_fresh_and_isolated() {
        let (model, vocab) = setup();
        let rescorer = Rescorer::new(&model, &vocab, false, None);
        let a = rescorer.open_session("c1", None).unwrap();
        assert_eq!(a.turns_consumed, 0);
        let b = rescorer.open_session("c2", None).unwrap();
        let a2 = rescorer
            .advance_session(a, "please add the pods to my cart", Actor::User, None)
            .unwrap();
        assert_eq!(a2.turns_consumed, 1);
        assert_eq!(b.turns_consumed, 0);
        assert_eq!(b.memory, rescorer.open_session("c3", None).unwrap().memory);
    }

    #[test]
    fn rescore_turn_is_pure_and_deterministic() {
        let (model, vocab) = setup();
        let rescorer = Rescorer::new(&model, &vocab, false, None);
        let state = rescorer.open_session("c1", None).unwrap();
        let rec = record("c1", 0, &["add the pods", "add the pots"]);
        let opts = RescoreOptions::default();
        let r1 = rescorer.rescore_turn(&state, &rec, &opts).unwrap();
        let r2 = rescorer.rescore_turn(&state, &rec, &opts).unwrap();
        for (a, b) in r1.ranked.iter().zip(&r2.ranked) {
            assert_eq!(a.combined_score.to_bits(), b.combined_score.to_bits());
            assert_eq!(a.hypothesis.first_pass_rank, b.hypothesis.first_pass_rank);
        }
        assert_eq!(state.turns_consumed, 0, "rescore must not mutate state");
    }

    #[test]
    fn zero_lm_scale_reproduces_first_pass_order() {
        let (model, vocab) = setup();
        let rescorer = Rescorer::new(&model, &vocab, false, None);
        let state = rescorer.open_session("c1", None).unwrap();
        let rec = record("c1", 0, &["add the pods", "add the pots", "add the fries"]);
        let opts = RescoreOptions {
            lm_scale: 0.0,
            ..RescoreOptions::default()
        };
        let out = rescorer.rescore_turn(&state, &rec, &opts).unwrap();
        let ranks: Vec<usize> = out.ranked.iter().map(|h| h.hypothesis.first_pass_rank).collect();
        assert_eq!(ranks, vec![0, 1, 2]);
    }

    #[test]
    fn zero_acoustic_scale_is_pure_lm_ranking() {
        let (model, vocab) = setup();
        let rescorer = Rescorer::new(&model, &vocab, false, None);
        let state = rescorer.open_session("c1", None).unwrap();
        let rec = record("c1", 0, &["add the pods", "add the pots"]);
        let opts = RescoreOptions {
            acoustic_scale: 0.0,
            ..RescoreOptions::default()
        };
        let out = rescorer.rescore_turn(&state, &rec, &opts).unwrap();
        for pair in out.ranked.windows(2) {
            assert!(pair[0].lm_logprob >= pair[1].lm_logprob);
        }
    }

    #[test]
    fn ranking_is_invariant_to_input_permutation() {
        let (model, vocab) = setup();
        let rescorer = Rescorer::new(&model, &vocab, false, None);
        let state = rescorer.open_session("c1", None).unwrap();
        let rec = record("c1", 0, &["add the pods", "add the pots", "add the fries"]);
        let mut permuted = rec.clone();
        permuted.hypotheses.rotate_left(1);
        let opts = RescoreOptions::default();
        let a = rescorer.rescore_turn(&state, &rec, &opts).unwrap();
        let b = rescorer.rescore_turn(&state, &permuted, &opts).unwrap();
        let texts_a: Vec<&str> = a.ranked.iter().map(|h| h.hypothesis.text.as_str()).collect();
        let texts_b: Vec<&str> = b.ranked.iter().map(|h| h.hypothesis.text.as_str()).collect();
        assert_eq!(texts_a, texts_b);
    }

    #[test]
    fn combined_score_scale_invariance() {
        let (model, vocab) = setup();
        let rescorer = Rescorer::new(&model, &vocab, false, None);
        let state = rescorer.open_session("c1", None).unwrap();
        let rec = record("c1", 0, &["add the pods", "add the pots", "lemme grab one melt"]);
        let base = rescorer
            .rescore_turn(&state, &rec, &RescoreOptions::default())
            .unwrap();
        let scaled = rescorer
            .rescore_turn(
                &state,
                &rec,
                &RescoreOptions {
                    acoustic_scale: 3.0,
                    lm_scale: 3.0,
                    ..RescoreOptions::default()
                },
            )
            .unwrap();
        let order_a: Vec<usize> = base.ranked.iter().map(|h| h.hypothesis.first_pass_rank).collect();
        let order_b: Vec<usize> = scaled.ranked.iter().map(|h| h.hypothesis.first_pass_rank).collect();
        assert_eq!(order_a, order_b);
        for (a, b) in base.ranked.iter().zip(&scaled.ranked) {
            assert!((b.combined_score - 3.0 * a.combined_score).abs() < 1e-9);
        }
    }

    #[test]
    fn turn_order_violation_is_an_error() {
        let (model, vocab) = setup();
        let rescorer = Rescorer::new(&model, &vocab, false, None);
        let state = rescorer.open_session("c1", None).unwrap();
        let state = rescorer
            .advance_session(state, "hello", Actor::Bot, None)
            .unwrap();
        let state = rescorer
            .advance_session(state, "hi i want laundry today", Actor::User, None)
            .unwrap();
        let rec = record("c1", 0, &["add the pods"]);
        let err = rescorer
            .rescore_turn(&state, &rec, &RescoreOptions::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("c1-t0"), "{err}");
    }

    #[test]
    fn empty_hypothesis_warns_and_scores_terminator_only() {
        let (model, vocab) = setup();
        let rescorer = Rescorer::new(&model, &vocab, false, None);
        let state = rescorer.open_session("c1", None).unwrap();
        let rec = record("c1", 0, &["add the pods", ""]);
        let out = rescorer
            .rescore_turn(&state, &rec, &RescoreOptions::default())
            .unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.ranked.len(), 2);
    }

    #[test]
    fn advance_changes_next_turn_scores_for_contextual_models() {
        let (model, vocab) = setup();
        let rescorer = Rescorer::new(&model, &vocab, false, None);
        let fresh = rescorer.open_session("c1", None).unwrap();
        let rec = record("c1", 1, &["please add the pods to my cart"]);
        let opts = RescoreOptions::default();
        let fresh_score = rescorer.rescore_turn(&fresh, &rec, &opts).unwrap().ranked[0].lm_logprob;
        let advanced = rescorer
            .advance_session(fresh, "hi i want laundry today", Actor::User, None)
            .unwrap();
        let ctx_score = rescorer.rescore_turn(&advanced, &rec, &opts).unwrap().ranked[0].lm_logprob;
        assert_ne!(fresh_score, ctx_score);
    }

    #[test]
    fn fusion_without_registered_domain_is_an_error() {
        let mut synth = SynthConfig::two_domain_default();
        synth.n_conversations = 10;
        let corpus = generate_synthetic(&synth, 1).unwrap();
        let vocab = build_vocab(&corpus, 500).unwrap();
        let config = ModelConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            vocab_size: vocab.len(),
            dropout: 0.0,
            fusion: crate::model::FusionConfig::on(8),
            ..ModelConfig::default()
        };
        let model = init_model::<f32>(&config, 1).unwrap();
        let table = crate::embedding::pseudo_table(&corpus.conversations, 8, 5).unwrap();
        let rescorer = Rescorer::new(&model, &vocab, false, Some(&table));
        assert!(rescorer.open_session("c1", Some("retail")).is_ok());
        assert!(rescorer.open_session("c1", Some("unknown-domain")).is_err());
        assert!(rescorer.open_session("c1", None).is_err());
    }
}
