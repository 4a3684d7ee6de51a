//! Small line-delimited formats the CLI reads and writes: reference
//! transcripts and hypothesis extraction from rescored n-best files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rescoring::{NBestRecord, RescoredRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefRecord {
    pub utterance_id: String,
    pub text: String,
}

pub fn write_refs(path: &Path, records: &[RefRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a map utterance id -> text from any of the supported shapes:
/// `{utterance_id, text}` lines, rescored n-best (the `new_rank` 0
/// hypothesis), or an n-best file (the `reference` field). Bot pass-through
/// records are skipped.
pub fn read_text_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Record {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad record: {e}"),
        })?;
        let record_err = |msg: String| Error::Record {
            path: path.display().to_string(),
            line: lineno + 1,
            msg,
        };
        if value.get("hypotheses").is_some() {
            if value.get("actor").and_then(|a| a.as_str()) == Some("bot") {
                continue;
            }
            // rescored records carry new_rank; raw n-best records carry a reference
            if value["hypotheses"][0].get("new_rank").is_some() {
                let rec: RescoredRecord = serde_json::from_value(value)
                    .map_err(|e| record_err(format!("bad rescored record: {e}")))?;
                let top = rec
                    .text_at_rank(0)
                    .ok_or_else(|| record_err("no rank-0 hypothesis".to_string()))?;
                out.insert(rec.utterance_id.clone(), top.to_string());
            } else {
                let rec: NBestRecord = serde_json::from_value(value)
                    .map_err(|e| record_err(format!("bad n-best record: {e}")))?;
                let reference = rec
                    .reference
                    .clone()
                    .ok_or_else(|| record_err("n-best record lacks a reference".to_string()))?;
                out.insert(rec.utterance_id, reference);
            }
        } else {
            let rec: RefRecord = serde_json::from_value(value)
                .map_err(|e| record_err(format!("bad reference record: {e}")))?;
            out.insert(rec.utterance_id, rec.text);
        }
    }
    Ok(out)
}

/// Pair references with hypotheses by utterance id; both directions of
/// missing ids are an error.
pub fn paired_utterances(
    refs: &BTreeMap<String, String>,
    hyps: &BTreeMap<String, String>,
) -> Result<Vec<crate::evaluation::UtterancePair>> {
    let missing_hyp: Vec<&String> = refs.keys().filter(|id| !hyps.contains_key(*id)).collect();
    let missing_ref: Vec<&String> = hyps.keys().filter(|id| !refs.contains_key(*id)).collect();
    if !missing_hyp.is_empty() || !missing_ref.is_empty() {
        return Err(Error::data(format!(
            "utterance ids do not match: {} missing from hypotheses {:?}, {} missing from references {:?}",
            missing_hyp.len(),
            missing_hyp.iter().take(5).collect::<Vec<_>>(),
            missing_ref.len(),
            missing_ref.iter().take(5).collect::<Vec<_>>()
        )));
    }
    Ok(refs
        .iter()
        .map(|(id, reference)| {
            crate::evaluation::UtterancePair::from_text(id, reference, &hyps[id])
        })
        .collect())
}
