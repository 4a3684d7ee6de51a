//! Domain-embedding providers: fixed-size vectors keyed by domain tag that
//! the fusion layer conditions on. Real vectors derived from an external
//! encoder arrive through the file provider; the pseudo provider builds
//! deterministic bag-of-words random projections so every test is
//! self-contained. Embeddings are L2-normalized at this boundary regardless
//! of source, keeping fusion-gate behavior scale-stable across providers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::{tokenize, Conversation};
use crate::error::{Error, Result};
use crate::numerics::{Real, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct DomainEmbedding {
    pub domain: String,
    pub vector: Vec<f64>,
    /// Provenance: "file:<path>" or "pseudo:<seed>".
    pub source: String,
}

/// Domain-keyed embedding table with a uniform dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    entries: BTreeMap<String, DomainEmbedding>,
    dim: usize,
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

impl EmbeddingTable {
    pub fn new() -> Self {
        EmbeddingTable::default()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, mut emb: DomainEmbedding) -> Result<()> {
        if emb.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "embedding for domain {} contains non-finite values",
                emb.domain
            )));
        }
        if self.entries.is_empty() {
            self.dim = emb.vector.len();
        } else if emb.vector.len() != self.dim {
            return Err(Error::data(format!(
                "embedding for domain {} has dimension {} but the table holds {}",
                emb.domain,
                emb.vector.len(),
                self.dim
            )));
        }
        l2_normalize(&mut emb.vector);
        self.entries.insert(emb.domain.clone(), emb);
        Ok(())
    }

    pub fn get(&self, domain: &str) -> Option<&DomainEmbedding> {
        self.entries.get(domain)
    }

    /// Embedding cast to the model's scalar type.
    pub fn vector_as<R: Real>(&self, domain: &str) -> Option<Vec<R>> {
        self.get(domain)
            .map(|e| e.vector.iter().map(|&v| R::from_f64(v)).collect())
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DomainEmbedding> {
        self.entries.values()
    }
}

/// Embedding file: a text header `embeddings <version> <dim> <count>`, then
/// one record per line `<domain> <v0> <v1> ...` with decimal components.
pub fn load_embedding_file(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read embeddings {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(EmbeddingTable::new());
    };
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "embeddings" || parts[1] != "1" {
        return Err(Error::data(format!(
            "{}: bad embedding header {header:?} (expected `embeddings 1 <dim> <count>`)",
            path.display()
        )));
    }
    let dim: usize = parts[2]
        .parse()
        .map_err(|_| Error::data(format!("{}: bad dimension in header", path.display())))?;
    let mut table = EmbeddingTable::new();
    for (lineno, line) in lines {
        let mut fields = line.split_whitespace();
        let domain = fields.next().ok_or_else(|| Error::Record {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: "missing domain".to_string(),
        })?;
        let vector: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Record {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("bad component {f:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if vector.len() != dim {
            return Err(Error::Record {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("dimension {} does not match header {dim}", vector.len()),
            });
        }
        if vector.iter().any(|v| v.is_nan()) {
            return Err(Error::Record {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "NaN component".to_string(),
            });
        }
        table.insert(DomainEmbedding {
            domain: domain.to_string(),
            vector,
            source: format!("file:{}", path.display()),
        })?;
    }
    Ok(table)
}

pub fn write_embedding_file(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut out = format!("embeddings 1 {} {}\n", table.dim(), table.len());
    for e in table.iter() {
        out.push_str(&e.domain);
        for v in &e.vector {
            out.push(' ');
            out.push_str(&format!("{v:.17e}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn token_seed(seed: u64, token: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ seed.rotate_left(31);
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic bag-of-words random-projection embedding: the average over
/// corpus tokens of a per-token seeded normal vector, L2-normalized. A pure
/// function of (corpus tokens, dimension, seed); duplicating the corpus
/// leaves it unchanged.
pub fn pseudo_embedding(
    domain: &str,
    corpus: &[Conversation],
    d_embed: usize,
    seed: u64,
) -> Result<DomainEmbedding> {
    if corpus.is_empty() {
        return Err(Error::data(format!(
            "pseudo embedding for domain {domain}: empty corpus"
        )));
    }
    let mut acc = vec![0.0f64; d_embed];
    let mut count = 0u64;
    for conv in corpus {
        for turn in &conv.turns {
            for tok in tokenize(&turn.text) {
                let mut rng = Rng::seed_from(token_seed(seed, &tok));
                for slot in acc.iter_mut() {
                    *slot += rng.normal();
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::data(format!(
            "pseudo embedding for domain {domain}: corpus has no tokens"
        )));
    }
    let mut vector: Vec<f64> = acc.into_iter().map(|v| v / count as f64).collect();
    l2_normalize(&mut vector);
    Ok(DomainEmbedding {
        domain: domain.to_string(),
        vector,
        source: format!("pseudo:{seed}"),
    })
}

/// Pseudo embeddings for every domain tag present in the conversations.
pub fn pseudo_table(
    conversations: &[Conversation],
    d_embed: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let mut by_domain: BTreeMap<String, Vec<Conversation>> = BTreeMap::new();
    for conv in conversations {
        let Some(domain) = &conv.domain else {
            continue;
        };
        by_domain.entry(domain.clone()).or_default().push(conv.clone());
    }
    let mut table = EmbeddingTable::new();
    for (domain, convs) in &by_domain {
        table.insert(pseudo_embedding(domain, convs, d_embed, seed)?)?;
    }
    Ok(table)
}

impl EmbeddingTable {
    /// JSON form used inside checkpoint metadata.
    pub fn to_json(&self) -> serde_json::Value {
        let entries: BTreeMap<&str, &[f64]> = self
            .entries
            .iter()
            .map(|(k, v)| (k.as_str(), v.vector.as_slice()))
            .collect();
        serde_json::json!({ "dim": self.dim, "entries": entries })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Option<EmbeddingTable>> {
        if value.is_null() {
            return Ok(None);
        }
        let entries = value
            .get("entries")
            .and_then(|e| e.as_object())
            .ok_or_else(|| Error::data("embedding table json lacks entries".to_string()))?;
        let mut table = EmbeddingTable::new();
        for (domain, vec) in entries {
            let vector: Vec<f64> = serde_json::from_value(vec.clone())
                .map_err(|e| Error::data(format!("embedding {domain}: {e}")))?;
            table.insert(DomainEmbedding {
                domain: domain.clone(),
                vector,
                source: "checkpoint".to_string(),
            })?;
        }
        Ok(Some(table))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Actor, Turn};

    fn conv(id: &str, texts: &[&str]) -> Conversation {
        Conversation {
            id: id.into(),
            turns: texts
                .iter()
                .map(|t| Turn {
                    actor: Actor::User,
                    text: t.to_string(),
                    dialogue_act: "inform".into(),
                    slot_spans: vec![],
                })
                .collect(),
            domain: None,
        }
    }

    #[test]
    fn identical_corpora_identical_embeddings() {
        let c = vec![conv("a", &["add tide pods", "track my order"])];
        let e1 = pseudo_embedding("retail", &c, 32, 7).unwrap();
        let e2 = pseudo_embedding("retail", &c, 32, 7).unwrap();
        assert_eq!(e1.vector, e2.vector);
        let e3 = pseudo_embedding("retail", &c, 32, 8).unwrap();
        assert_ne!(e1.vector, e3.vector);
    }

    #[test]
    fn duplicated_corpus_is_average_invariant() {
        let once = vec![conv("a", &["add tide pods"])];
        let twice = vec![conv("a", &["add tide pods"]), conv("b", &["add tide pods"])];
        let e1 = pseudo_embedding("d", &once, 16, 3).unwrap();
        let e2 = pseudo_embedding("d", &twice, 16, 3).unwrap();
        for (a, b) in e1.vector.iter().zip(&e2.vector) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_vocabularies_have_low_cosine() {
        let a = vec![conv("a", &["pods bleach softener laundry", "cart shelf basket aisle"])];
        let b = vec![conv("b", &["patty slider fries burgers", "tray menu combo meal"])];
        let ea = pseudo_embedding("a", &a, 32, 11).unwrap();
        let eb = pseudo_embedding("b", &b, 32, 11).unwrap();
        assert!(cosine(&ea.vector, &eb.vector).abs() < 0.5);
    }

    #[test]
    fn embeddings_are_normalized() {
        let c = vec![conv("a", &["some words here"])];
        let e = pseudo_embedding("d", &c, 8, 1).unwrap();
        let norm: f64 = e.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(pseudo_embedding("d", &[], 8, 1).is_err());
    }

    #[test]
    fn file_round_trip_and_dimension_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut table = EmbeddingTable::new();
        table
            .insert(DomainEmbedding {
                domain: "retail".into(),
                vector: vec![0.25; 768],
                source: "test".into(),
            })
            .unwrap();
        table
            .insert(DomainEmbedding {
                domain: "fastfood".into(),
                vector: vec![-0.5; 768],
                source: "test".into(),
            })
            .unwrap();
        write_embedding_file(&path, &table).unwrap();
        let loaded = load_embedding_file(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.dim(), 768);
        for e in table.iter() {
            let l = loaded.get(&e.domain).unwrap();
            for (a, b) in e.vector.iter().zip(&l.vector) {
                assert!((a - b).abs() < 1e-15);
            }
        }

        // mixed dimensions rejected
        let bad = "embeddings 1 3 2\nretail 0.1 0.2 0.3\nfastfood 0.1 0.2\n";
        let bad_path = dir.path().join("bad.txt");
        std::fs::write(&bad_path, bad).unwrap();
        assert!(load_embedding_file(&bad_path).is_err());

        // NaN rejected
        let nan = "embeddings 1 2 1\nretail NaN 0.2\n";
        let nan_path = dir.path().join("nan.txt");
        std::fs::write(&nan_path, nan).unwrap();
        assert!(load_embedding_file(&nan_path).is_err());
    }

    #[test]
    fn empty_file_is_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.txt");
        std::fs::write(&path, "").unwrap();
        let table = load_embedding_file(&path).unwrap();
        assert!(table.is_empty());
    }
}
