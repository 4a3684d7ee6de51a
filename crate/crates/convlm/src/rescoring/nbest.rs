//! N-best file format: line-delimited JSON records in dialogue order.
//!
//! Each record carries an utterance id, its conversation and turn index, the
//! actor (bot records hold exactly one pass-through hypothesis so sessions
//! can advance over bot responses), an optional dialogue act and reference,
//! and the first-pass hypotheses ordered best-first; a hypothesis's
//! first-pass rank is its position in the array. Rescored output adds
//! `{combined_score, lm_logprob, new_rank}` per hypothesis.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Actor;
use crate::error::{Error, Result};

pub const MAX_HYPOTHESES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub text: String,
    pub acoustic_score: f64,
}

fn default_actor() -> Actor {
    Actor::User
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestRecord {
    pub utterance_id: String,
    pub conversation_id: String,
    pub turn_index: usize,
    #[serde(default = "default_actor")]
    pub actor: Actor,
    /// Domain tag for fusion models; carried from corpus generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_act: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub hypotheses: Vec<HypothesisRecord>,
}

impl NBestRecord {
    pub fn validate(&self) -> Result<()> {
        if self.hypotheses.is_empty() || self.hypotheses.len() > MAX_HYPOTHESES {
            return Err(Error::data(format!(
                "utterance {}: {} hypotheses (expected 1..={MAX_HYPOTHESES})",
                self.utterance_id,
                self.hypotheses.len()
            )));
        }
        Ok(())
    }
}

/// One rescored hypothesis in the output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoredHypothesis {
    pub text: String,
    pub acoustic_score: f64,
    pub lm_logprob: f64,
    pub combined_score: f64,
    pub new_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoredRecord {
    pub utterance_id: String,
    pub conversation_id: String,
    pub turn_index: usize,
    #[serde(default = "default_actor")]
    pub actor: Actor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_act: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Hypotheses in original first-pass order, annotated with scores.
    pub hypotheses: Vec<RescoredHypothesis>,
}

impl RescoredRecord {
    /// Hypothesis text at a given new rank.
    pub fn text_at_rank(&self, rank: usize) -> Option<&str> {
        self.hypotheses
            .iter()
            .find(|h| h.new_rank == rank)
            .map(|h| h.text.as_str())
    }
}

pub fn read_nbest_file(path: &Path) -> Result<Vec<NBestRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read n-best file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: NBestRecord = serde_json::from_str(line).map_err(|e| Error::Record {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad n-best record: {e}"),
        })?;
        rec.validate().map_err(|e| Error::Record {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_nbest_file(path: &Path, records: &[NBestRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_rescored_file(path: &Path) -> Result<Vec<RescoredRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read rescored file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RescoredRecord = serde_json::from_str(line).map_err(|e| Error::Record {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad rescored record: {e}"),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_rescored_file(path: &Path, records: &[RescoredRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
