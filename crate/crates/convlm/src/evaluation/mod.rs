//! Evaluation harness: perplexity, WER, content WER, slot-detection F1, and
//! matched-pairs significance between systems.

pub mod mpsswe;
pub mod stopwords;
pub mod wer;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus, Vocabulary};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::LmModel;
use crate::numerics::Real;
use crate::training::{eval_session_options, prepare_sessions};

pub use mpsswe::{mpsswe, MpssweResult};
pub use stopwords::{default_stopwords, load_stopwords, stopword_hash};
pub use wer::{cwer, filter_stopwords, wer, Alignment, EditOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Score user-turn words only (reporting default).
    UserWords,
    /// Score user and bot words.
    AllWords,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Token-level micro F1 over non-zero slot classes on masked positions.
pub fn slot_f1(predicted: &[u8], gold: &[u8], mask: &[bool]) -> Result<SlotScores> {
    if predicted.len() != gold.len() || predicted.len() != mask.len() {
        return Err(Error::data(format!(
            "slot_f1: {} predictions vs {} gold vs {} mask entries",
            predicted.len(),
            gold.len(),
            mask.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for ((&p, &g), &m) in predicted.iter().zip(gold).zip(mask) {
        if !m {
            continue;
        }
        if p != 0 && p == g {
            tp += 1;
        }
        if p != 0 && p != g {
            fp += 1;
        }
        if g != 0 && p != g {
            fn_ += 1;
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SlotScores {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

/// Corpus perplexity: exp of the mean NLL over masked positions. The mask
/// policy decides whether bot words count; control and act-tag tokens never
/// do. A fusion model resolves each conversation's embedding by domain tag,
/// unless `forced_domain` overrides it for every conversation.
pub fn perplexity<R: Real>(
    model: &LmModel<R>,
    corpus: &Corpus,
    vocab: &Vocabulary,
    da_enabled: bool,
    policy: MaskPolicy,
    embeddings: Option<&EmbeddingTable>,
    forced_domain: Option<&str>,
) -> Result<f64> {
    let mut opts = eval_session_options();
    if policy == MaskPolicy::AllWords {
        opts.loss_on_bot = true;
    }
    let sessions = prepare_sessions(corpus, vocab, da_enabled, opts)?;
    let mut nll = 0.0f64;
    let mut count = 0usize;
    for ts in &sessions {
        let emb: Option<Vec<R>> = if model.config.fusion.enabled() {
            let table = embeddings.ok_or_else(|| {
                Error::config("fusion model evaluated without embeddings".to_string())
            })?;
            let tag = forced_domain
                .map(str::to_string)
                .or_else(|| ts.domain.clone())
                .ok_or_else(|| Error::data("conversation lacks a domain tag".to_string()))?;
            Some(table.vector_as::<R>(&tag).ok_or_else(|| {
                Error::data(format!("domain {tag:?} is not in the embedding table"))
            })?)
        } else {
            None
        };
        let (s, n) = crate::model::nll_on_session(model, &ts.session, emb.as_deref())?;
        nll += s;
        count += n;
    }
    if count == 0 {
        return Err(Error::data("perplexity over zero scored tokens".to_string()));
    }
    Ok((nll / count as f64).exp())
}

/// One utterance pair for corpus-level error-rate evaluation.
#[derive(Debug, Clone)]
pub struct UtterancePair {
    pub id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
}

impl UtterancePair {
    pub fn from_text(id: &str, reference: &str, hypothesis: &str) -> Self {
        UtterancePair {
            id: id.to_string(),
            reference: tokenize(reference),
            hypothesis: tokenize(hypothesis),
        }
    }
}

/// Corpus-level error-rate bundle. Rates are micro averages: total errors
/// over total reference words.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRateReport {
    pub utterances: usize,
    pub wer: f64,
    pub wer_errors: usize,
    pub ref_words: usize,
    pub cwer: f64,
    pub cwer_errors: usize,
    pub content_words: usize,
    /// Utterances whose reference was all stop words, excluded from CWER.
    pub cwer_excluded: usize,
    pub stopword_list_hash: String,
    /// Per-utterance (wer_errors, cwer_errors); CWER-excluded utterances
    /// carry zero content errors here.
    #[serde(skip)]
    pub per_utterance: Vec<(String, usize, usize)>,
}

pub fn error_rates(
    pairs: &[UtterancePair],
    stopword_set: &BTreeSet<String>,
) -> Result<ErrorRateReport> {
    if pairs.is_empty() {
        return Err(Error::data("no utterances to evaluate".to_string()));
    }
    let mut wer_errors = 0usize;
    let mut ref_words = 0usize;
    let mut cwer_errors = 0usize;
    let mut content_words = 0usize;
    let mut excluded = 0usize;
    let mut per_utterance = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (_, alignment) = wer(&p.reference, &p.hypothesis)?;
        let w_err = alignment.errors();
        wer_errors += w_err;
        ref_words += p.reference.len();
        let c_err = match cwer(&p.reference, &p.hypothesis, stopword_set)? {
            Some((_, a)) => {
                content_words += filter_stopwords(&p.reference, stopword_set).len();
                cwer_errors += a.errors();
                a.errors()
            }
            None => {
                excluded += 1;
                0
            }
        };
        per_utterance.push((p.id.clone(), w_err, c_err));
    }
    Ok(ErrorRateReport {
        utterances: pairs.len(),
        wer: wer_errors as f64 / ref_words.max(1) as f64,
        wer_errors,
        ref_words,
        cwer: if content_words == 0 {
            0.0
        } else {
            cwer_errors as f64 / content_words as f64
        },
        cwer_errors,
        content_words,
        cwer_excluded: excluded,
        stopword_list_hash: stopword_hash(stopword_set),
        per_utterance,
    })
}

/// Per-utterance error counts carried in reports so significance tests can
/// be recomputed downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceErrors {
    pub utterance_id: String,
    pub wer_errors: usize,
    pub cwer_errors: usize,
}

/// Metric bundle emitted by evaluation commands; absent metrics are None.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cwer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utterances: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopword_list_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_utterance_errors: Option<Vec<UtteranceErrors>>,
}

impl ErrorRateReport {
    pub fn utterance_errors(&self) -> Vec<UtteranceErrors> {
        self.per_utterance
            .iter()
            .map(|(id, w, c)| UtteranceErrors {
                utterance_id: id.clone(),
                wer_errors: *w,
                cwer_errors: *c,
            })
            .collect()
    }
}

/// Relative reductions of a system against a named baseline, with
/// matched-pairs significance on both error definitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: String,
    pub system: String,
    pub baseline_wer: f64,
    pub system_wer: f64,
    /// (baseline - system) / baseline
    pub wer_reduction: f64,
    pub baseline_cwer: f64,
    pub system_cwer: f64,
    pub cwer_reduction: f64,
    pub mpsswe_wer: MpssweResult,
    pub mpsswe_cwer: MpssweResult,
}

fn relative_reduction(base: f64, sys: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (base - sys) / base
    }
}

/// Compare two systems against the same references. Utterance ids must
/// match pairwise; the reports must come from the same reference set.
pub fn compare_systems(
    baseline_name: &str,
    baseline: &ErrorRateReport,
    system_name: &str,
    system: &ErrorRateReport,
) -> Result<ComparisonReport> {
    if baseline.per_utterance.len() != system.per_utterance.len() {
        return Err(Error::data(format!(
            "comparison: {} vs {} utterances",
            baseline.per_utterance.len(),
            system.per_utterance.len()
        )));
    }
    let mut missing = Vec::new();
    for (a, b) in baseline.per_utterance.iter().zip(&system.per_utterance) {
        if a.0 != b.0 {
            missing.push(a.0.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "comparison: utterance ids do not align: {missing:?}"
        )));
    }
    let wer_a: Vec<f64> = baseline.per_utterance.iter().map(|u| u.1 as f64).collect();
    let wer_b: Vec<f64> = system.per_utterance.iter().map(|u| u.1 as f64).collect();
    let cwer_a: Vec<f64> = baseline.per_utterance.iter().map(|u| u.2 as f64).collect();
    let cwer_b: Vec<f64> = system.per_utterance.iter().map(|u| u.2 as f64).collect();
    Ok(ComparisonReport {
        baseline: baseline_name.to_string(),
        system: system_name.to_string(),
        baseline_wer: baseline.wer,
        system_wer: system.wer,
        wer_reduction: relative_reduction(baseline.wer, system.wer),
        baseline_cwer: baseline.cwer,
        system_cwer: system.cwer,
        cwer_reduction: relative_reduction(baseline.cwer, system.cwer),
        mpsswe_wer: mpsswe(&wer_a, &wer_b)?,
        mpsswe_cwer: mpsswe(&cwer_a, &cwer_b)?,
    })
}
