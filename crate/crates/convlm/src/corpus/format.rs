//! Line-delimited corpus files: a JSON header line declaring the schema
//! version and label sets, then one JSON conversation per line.

use std::fs;
use std::path::Path;

use crate::corpus::{Conversation, Corpus, CorpusHeader};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub fn parse_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::data(format!("cannot read corpus {}: {e}", path.display()))
    })?;
    parse_corpus_str(&text, &path.display().to_string())
}

pub fn parse_corpus_str(text: &str, source: &str) -> Result<Corpus> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, header_text)) = lines.next() else {
        // An empty file is an empty corpus with an empty schema.
        return Ok(Corpus {
            header: CorpusHeader {
                schema_version: SCHEMA_VERSION,
                dialogue_acts: Vec::new(),
                slot_tags: Vec::new(),
            },
            conversations: Vec::new(),
        });
    };
    let header: CorpusHeader = serde_json::from_str(header_text).map_err(|e| Error::Record {
        path: source.to_string(),
        line: hline + 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Record {
            path: source.to_string(),
            line: hline + 1,
            msg: format!(
                "schema version {} unsupported (expected {SCHEMA_VERSION})",
                header.schema_version
            ),
        });
    }
    let mut conversations = Vec::new();
    for (lineno, line) in lines {
        let conv: Conversation = serde_json::from_str(line).map_err(|e| Error::Record {
            path: source.to_string(),
            line: lineno + 1,
            msg: format!("bad conversation record: {e}"),
        })?;
        conv.validate(&header).map_err(|e| Error::Record {
            path: source.to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        conversations.push(conv);
    }
    Ok(Corpus {
        header,
        conversations,
    })
}

/// Canonical serialization: compact JSON, one record per line, trailing
/// newline. Parsing then re-serializing any well-formed file is a fixpoint.
pub fn serialize_corpus(corpus: &Corpus) -> Result<String> {
    let mut out = serde_json::to_string(&corpus.header)?;
    out.push('\n');
    for conv in &corpus.conversations {
        out.push_str(&serde_json::to_string(conv)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    fs::write(path, serialize_corpus(corpus)?)?;
    Ok(())
}
