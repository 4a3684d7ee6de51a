//! Shipped default stop-word list: common English function words (articles,
//! conjunctions, prepositions, pronouns, auxiliaries, interrogatives).
//! Content-word error rates depend on the list, so reports carry its hash.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::fnv1a_hex;

pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "then", "so", "of", "to", "in", "on", "at", "by",
    "for", "with", "from", "as", "is", "am", "are", "was", "were", "be", "been", "being", "do",
    "does", "did", "have", "has", "had", "will", "would", "can", "could", "shall", "should",
    "may", "might", "must", "i", "you", "he", "she", "it", "we", "they", "me", "him", "her",
    "them", "my", "your", "his", "its", "our", "their", "this", "that", "these", "those", "not",
    "no", "what", "which", "who", "whom", "how", "when", "where", "why",
];

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// One stop word per line; blank lines and `#` comments ignored.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read stop words {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect())
}

/// Stable identifier of a list: FNV-1a 64 over the sorted words joined with
/// newlines. Reported alongside every content-WER figure.
pub fn stopword_hash(words: &BTreeSet<String>) -> String {
    let joined = words.iter().cloned().collect::<Vec<_>>().join("\n");
    fnv1a_hex(joined.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_list_is_lowercase_and_deduplicated() {
        let set = default_stopwords();
        assert_eq!(set.len(), DEFAULT_STOPWORDS.len());
        assert!(set.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
        assert!(set.len() >= 50);
    }

    #[test]
    fn hash_is_order_insensitive_but_content_sensitive() {
        let a = default_stopwords();
        let h1 = stopword_hash(&a);
        let mut b = a.clone();
        b.insert("zzz".to_string());
        assert_ne!(h1, stopword_hash(&b));
        assert_eq!(h1, stopword_hash(&a.clone()));
    }

    #[test]
    fn file_loading_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stop.txt");
        std::fs::write(&path, "# comment\nThe\n\nAND\n").unwrap();
        let set = load_stopwords(&path).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.contains("the") && set.contains("and"));
    }
}
