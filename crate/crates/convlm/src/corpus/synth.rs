//! Synthetic task-oriented dialogue generator.
//!
//! Conversations follow a fixed shape: a neutral bot greeting, a neutral
//! user intent turn naming a topic keyword, then domain-flavored request /
//! inform / confirm rounds whose entities come from the topic announced in
//! the intent turn, optionally closed by a thanks turn. Entities therefore
//! appear only after their disambiguating keyword, which is what makes the
//! corpus context-dependent: an entity is predictable given cross-turn
//! memory and ambiguous without it.
//!
//! The same catalogs drive the synthetic n-best benchmark: references are
//! corrupted by swapping a slot word for a confusable partner from another
//! topic or another domain, with seeded acoustic noise deciding first-pass
//! order.

use serde::{Deserialize, Serialize};

use crate::corpus::{
    tokenize, Actor, Conversation, Corpus, CorpusHeader, SlotSpan, Turn,
};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::rescoring::nbest::{HypothesisRecord, NBestRecord};

pub const ACT_WELCOME: &str = "general-welcome";
pub const ACT_INTENT: &str = "inform-intent";
pub const ACT_REQUEST: &str = "request";
pub const ACT_INFORM: &str = "inform";
pub const ACT_THANKS: &str = "thank-you";

pub const SLOT_TAG: &str = "entity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    /// Keyword announced in the intent turn; also a slot.
    pub keyword: String,
    /// Single-token slot entities.
    pub entities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusablePair {
    pub word: String,
    pub partner: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub topics: Vec<TopicSpec>,
    /// Acoustically confusable word pairs used by the n-best corruptor.
    pub confusables: Vec<ConfusablePair>,
    /// Bot request templates; may use `{category}`.
    pub request_templates: Vec<String>,
    /// User inform templates; must use `{entity}`.
    pub inform_templates: Vec<String>,
    /// Bot confirmation templates; must use `{entity}`.
    pub confirm_templates: Vec<String>,
    /// User thanks templates.
    pub thanks_templates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_conversations: usize,
    /// Probability of appending another inform/confirm round (geometric).
    pub extra_round_prob: f64,
    /// Probability of a closing thanks turn. With both probabilities zero a
    /// conversation is exactly five turns, the target average.
    pub thanks_prob: f64,
    /// Neutral bot greeting templates shared by all domains.
    pub greeting_templates: Vec<String>,
    /// Neutral user intent templates shared by all domains; use `{category}`.
    pub intent_templates: Vec<String>,
    pub domains: Vec<DomainSpec>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.domains.len() < 2 {
            return Err(Error::config(format!(
                "synthetic config declares {} domain(s); at least 2 required",
                self.domains.len()
            )));
        }
        if self.n_conversations == 0 {
            return Err(Error::config("n_conversations must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.extra_round_prob) || !(0.0..=1.0).contains(&self.thanks_prob)
        {
            return Err(Error::config("round probabilities outside [0, 1)".to_string()));
        }
        if self.greeting_templates.is_empty() || self.intent_templates.is_empty() {
            return Err(Error::config("shared templates must be non-empty".to_string()));
        }
        for d in &self.domains {
            if d.topics.is_empty() || d.topics.iter().any(|t| t.entities.is_empty()) {
                return Err(Error::config(format!("domain {} has an empty catalog", d.name)));
            }
            if d.request_templates.is_empty()
                || d.inform_templates.is_empty()
                || d.confirm_templates.is_empty()
                || d.thanks_templates.is_empty()
            {
                return Err(Error::config(format!(
                    "domain {} is missing utterance templates",
                    d.name
                )));
            }
            if d.confusables.is_empty() {
                return Err(Error::config(format!(
                    "domain {} declares no confusable word pairs",
                    d.name
                )));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> CorpusHeader {
        CorpusHeader {
            schema_version: 1,
            dialogue_acts: vec![
                ACT_WELCOME.into(),
                ACT_INTENT.into(),
                ACT_REQUEST.into(),
                ACT_INFORM.into(),
                ACT_THANKS.into(),
            ],
            slot_tags: vec![SLOT_TAG.into()],
        }
    }

    /// Two e-commerce domains with disjoint catalogs and mostly disjoint
    /// flavored templates; greeting and intent turns are shared so nothing
    /// identifies the domain before the first slot word.
    pub fn two_domain_default() -> Self {
        SynthConfig {
            n_conversations: 2000,
            extra_round_prob: 0.0,
            thanks_prob: 0.0,
            greeting_templates: vec![
                "hello how can i help".into(),
                "hello what can i do for you".into(),
            ],
            intent_templates: vec![
                "hi i want {category} today".into(),
                "hi i need {category} today".into(),
            ],
            domains: vec![
                DomainSpec {
                    name: "retail".into(),
                    topics: vec![
                        TopicSpec {
                            keyword: "laundry".into(),
                            entities: vec!["pods".into(), "bleach".into(), "softener".into()],
                        },
                        TopicSpec {
                            keyword: "cookware".into(),
                            entities: vec!["pots".into(), "ladle".into(), "skillet".into()],
                        },
                        TopicSpec {
                            keyword: "books".into(),
                            entities: vec!["novel".into(), "comic".into(), "atlas".into()],
                        },
                    ],
                    confusables: vec![
                        ConfusablePair {
                            word: "pods".into(),
                            partner: "pots".into(),
                        },
                        ConfusablePair {
                            word: "comic".into(),
                            partner: "cocoa".into(),
                        },
                        ConfusablePair {
                            word: "ladle".into(),
                            partner: "latte".into(),
                        },
                    ],
                    request_templates: vec![
                        "sure which {category} product are you after".into(),
                        "okay browse our {category} shelf and choose".into(),
                    ],
                    inform_templates: vec![
                        "please add the {entity} to my cart".into(),
                        "please put the {entity} in my cart".into(),
                    ],
                    confirm_templates: vec![
                        "done the {entity} is in your cart".into(),
                        "alright your cart now holds the {entity}".into(),
                    ],
                    thanks_templates: vec![
                        "thanks that is everything".into(),
                        "thanks you saved my day".into(),
                    ],
                },
                DomainSpec {
                    name: "fastfood".into(),
                    topics: vec![
                        TopicSpec {
                            keyword: "burgers".into(),
                            entities: vec!["patty".into(), "slider".into(), "melt".into()],
                        },
                        TopicSpec {
                            keyword: "drinks".into(),
                            entities: vec!["latte".into(), "cola".into(), "cocoa".into()],
                        },
                        TopicSpec {
                            keyword: "sides".into(),
                            entities: vec!["fries".into(), "rings".into(), "slaw".into()],
                        },
                    ],
                    confusables: vec![
                        ConfusablePair {
                            word: "latte".into(),
                            partner: "ladle".into(),
                        },
                        ConfusablePair {
                            word: "slider".into(),
                            partner: "slaw".into(),
                        },
                        ConfusablePair {
                            word: "cocoa".into(),
                            partner: "cola".into(),
                        },
                    ],
                    request_templates: vec![
                        "coming up pick a {category} option from our menu".into(),
                        "nice our {category} lineup is fresh pick one".into(),
                    ],
                    inform_templates: vec![
                        "lemme grab one {entity} with my meal".into(),
                        "lemme order one {entity} for my tray".into(),
                    ],
                    confirm_templates: vec![
                        "got it one {entity} hot and ready soon".into(),
                        "sweet one {entity} lands on your tray soon".into(),
                    ],
                    thanks_templates: vec![
                        "cool cheers you rock".into(),
                        "cool thanks so much".into(),
                    ],
                },
            ],
        }
    }
}

/// Fill a `{placeholder}` template, returning the text and the slot span of
/// the substituted token.
fn fill(template: &str, placeholder: &str, value: &str) -> (String, Option<SlotSpan>) {
    let tokens = tokenize(template);
    let needle = format!("{{{placeholder}}}");
    let mut out = Vec::with_capacity(tokens.len());
    let mut span = None;
    for tok in tokens {
        if tok == needle {
            span = Some(SlotSpan {
                start: out.len(),
                end: out.len() + 1,
                tag: SLOT_TAG.into(),
            });
            out.push(value.to_string());
        } else {
            out.push(tok);
        }
    }
    (out.join(" "), span)
}

fn plain_turn(actor: Actor, text: String, act: &str) -> Turn {
    Turn {
        actor,
        text,
        dialogue_act: act.into(),
        slot_spans: vec![],
    }
}

fn slot_turn(actor: Actor, text: String, act: &str, span: Option<SlotSpan>) -> Turn {
    Turn {
        actor,
        text,
        dialogue_act: act.into(),
        slot_spans: span.into_iter().collect(),
    }
}

/// Deterministic synthetic corpus. Domains alternate round-robin so counts
/// split evenly; all remaining choices come from the seeded generator.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let mut rng = Rng::seed_from(seed).derive("synth");
    let header = config.header();
    let mut conversations = Vec::with_capacity(config.n_conversations);
    for i in 0..config.n_conversations {
        let domain = &config.domains[i % config.domains.len()];
        let topic = rng.choose(&domain.topics).clone();
        let mut turns = Vec::new();

        turns.push(plain_turn(
            Actor::Bot,
            rng.choose(&config.greeting_templates).clone(),
            ACT_WELCOME,
        ));
        let (text, span) = fill(rng.choose(&config.intent_templates), "category", &topic.keyword);
        turns.push(slot_turn(Actor::User, text, ACT_INTENT, span));
        let (text, span) = fill(rng.choose(&domain.request_templates), "category", &topic.keyword);
        turns.push(slot_turn(Actor::Bot, text, ACT_REQUEST, span));

        loop {
            let entity = rng.choose(&topic.entities).clone();
            let (text, span) = fill(rng.choose(&domain.inform_templates), "entity", &entity);
            turns.push(slot_turn(Actor::User, text, ACT_INFORM, span));
            let (text, span) = fill(rng.choose(&domain.confirm_templates), "entity", &entity);
            turns.push(slot_turn(Actor::Bot, text, ACT_INFORM, span));
            if rng.uniform() >= config.extra_round_prob {
                break;
            }
        }
        if rng.uniform() < config.thanks_prob {
            turns.push(plain_turn(
                Actor::User,
                rng.choose(&domain.thanks_templates).clone(),
                ACT_THANKS,
            ));
        }

        conversations.push(Conversation {
            id: format!("{}-{i:05}", domain.name),
            turns,
            domain: Some(domain.name.clone()),
        });
    }
    let corpus = Corpus {
        header,
        conversations,
    };
    corpus.validate()?;
    Ok(corpus)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NbestGenConfig {
    /// Log-domain standard deviation of the synthetic acoustic scores.
    pub acoustic_sigma: f64,
    /// Corrupt the intent turn's keyword with a keyword from another domain.
    pub corrupt_intent: bool,
    /// Corrupt inform-turn entities (confusable partner plus a cross-domain
    /// entity).
    pub corrupt_inform: bool,
}

impl Default for NbestGenConfig {
    fn default() -> Self {
        NbestGenConfig {
            acoustic_sigma: 0.5,
            corrupt_intent: true,
            corrupt_inform: true,
        }
    }
}

fn other_domain_word(
    config: &SynthConfig,
    own: &str,
    rng: &mut Rng,
    keyword: bool,
) -> Option<String> {
    let others: Vec<&DomainSpec> = config.domains.iter().filter(|d| d.name != own).collect();
    if others.is_empty() {
        return None;
    }
    let d = others[rng.below(others.len())];
    let t = &d.topics[rng.below(d.topics.len())];
    Some(if keyword {
        t.keyword.clone()
    } else {
        t.entities[rng.below(t.entities.len())].clone()
    })
}

fn confusable_partner(domain: &DomainSpec, word: &str) -> Option<String> {
    domain
        .confusables
        .iter()
        .find(|p| p.word == word)
        .map(|p| p.partner.clone())
        .or_else(|| {
            domain
                .confusables
                .iter()
                .find(|p| p.partner == word)
                .map(|p| p.word.clone())
        })
}

fn same_domain_other_topic(domain: &DomainSpec, topic_kw: &str, rng: &mut Rng) -> Option<String> {
    let others: Vec<&TopicSpec> = domain.topics.iter().filter(|t| t.keyword != topic_kw).collect();
    if others.is_empty() {
        return None;
    }
    let t = others[rng.below(others.len())];
    Some(t.entities[rng.below(t.entities.len())].clone())
}

fn replace_token(text: &str, pos: usize, replacement: &str) -> String {
    let mut toks = tokenize(text);
    toks[pos] = replacement.to_string();
    toks.join(" ")
}

/// Build the synthetic n-best benchmark for a corpus slice: every turn
/// becomes a record in dialogue order; user turns with slots get corrupted
/// alternatives and seeded acoustic scores, bot turns pass through as a
/// single hypothesis so the rescorer can advance its session.
pub fn generate_nbest(
    config: &SynthConfig,
    corpus: &Corpus,
    gen: &NbestGenConfig,
    seed: u64,
) -> Result<Vec<NBestRecord>> {
    let mut rng = Rng::seed_from(seed).derive("nbest");
    let mut records = Vec::new();
    for conv in &corpus.conversations {
        let domain_name = conv.domain.clone().unwrap_or_default();
        let domain = config
            .domains
            .iter()
            .find(|d| d.name == domain_name)
            .ok_or_else(|| {
                Error::data(format!(
                    "conversation {} has domain {domain_name:?} absent from the synthetic config",
                    conv.id
                ))
            })?;
        // Topic keyword from the intent turn drives same-domain corruption.
        let topic_kw = conv
            .turns
            .iter()
            .find(|t| t.dialogue_act == ACT_INTENT)
            .and_then(|t| t.slot_spans.first().map(|s| tokenize(&t.text)[s.start].clone()))
            .unwrap_or_default();

        for (turn_idx, turn) in conv.turns.iter().enumerate() {
            let utterance_id = format!("{}-t{turn_idx}", conv.id);
            if turn.actor == Actor::Bot {
                records.push(NBestRecord {
                    utterance_id,
                    conversation_id: conv.id.clone(),
                    turn_index: turn_idx,
                    actor: Actor::Bot,
                    domain: conv.domain.clone(),
                    dialogue_act: Some(turn.dialogue_act.clone()),
                    reference: Some(turn.text.clone()),
                    hypotheses: vec![HypothesisRecord {
                        text: turn.text.clone(),
                        acoustic_score: 0.0,
                    }],
                });
                continue;
            }

            let mut texts = vec![turn.text.clone()];
            if let Some(span) = turn.slot_spans.first() {
                let slot_word = tokenize(&turn.text)[span.start].clone();
                match turn.dialogue_act.as_str() {
                    ACT_INTENT if gen.corrupt_intent => {
                        if let Some(w) = other_domain_word(config, &domain.name, &mut rng, true) {
                            texts.push(replace_token(&turn.text, span.start, &w));
                        }
                    }
                    ACT_INFORM if gen.corrupt_inform => {
                        let partner = confusable_partner(domain, &slot_word)
                            .or_else(|| same_domain_other_topic(domain, &topic_kw, &mut rng));
                        if let Some(w) = partner {
                            if w != slot_word {
                                texts.push(replace_token(&turn.text, span.start, &w));
                            }
                        }
                        if let Some(w) = other_domain_word(config, &domain.name, &mut rng, false) {
                            if w != slot_word && !texts.iter().any(|t| t.contains(&format!(" {w} ")))
                            {
                                texts.push(replace_token(&turn.text, span.start, &w));
                            }
                        }
                    }
                    _ => {}
                }
            }

            let mut hyps: Vec<HypothesisRecord> = texts
                .into_iter()
                .map(|text| HypothesisRecord {
                    text,
                    acoustic_score: rng.normal() * gen.acoustic_sigma,
                })
                .collect();
            hyps.sort_by(|a, b| b.acoustic_score.total_cmp(&a.acoustic_score));
            records.push(NBestRecord {
                utterance_id,
                conversation_id: conv.id.clone(),
                turn_index: turn_idx,
                actor: Actor::User,
                domain: conv.domain.clone(),
                dialogue_act: Some(turn.dialogue_act.clone()),
                reference: Some(turn.text.clone()),
                hypotheses: hyps,
            });
        }
    }
    Ok(records)
}
