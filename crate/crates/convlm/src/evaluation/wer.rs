//! Word error rate via Levenshtein alignment with unit costs, and its
//! content-word variant that filters stop words from both sides first.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Match,
    Sub,
    Del,
    Ins,
}

/// Edit script aligning a hypothesis to a reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
    pub matches: usize,
    pub subs: usize,
    pub dels: usize,
    pub ins: usize,
}

impl Alignment {
    pub fn errors(&self) -> usize {
        self.subs + self.dels + self.ins
    }
}

/// Align hypothesis to reference and return `(rate, alignment)` where
/// `rate = (S + I + D) / |ref|`. Ties on the backtrace prefer
/// match > substitution > deletion > insertion.
pub fn wer(reference: &[String], hypothesis: &[String]) -> Result<(f64, Alignment)> {
    if reference.is_empty() {
        return Err(Error::data("wer: empty reference".to_string()));
    }
    let alignment = align(reference, hypothesis);
    let rate = alignment.errors() as f64 / reference.len() as f64;
    Ok((rate, alignment))
}

#[allow(clippy::needless_range_loop)]
fn align(reference: &[String], hypothesis: &[String]) -> Alignment {
    let m = reference.len();
    let n = hypothesis.len();
    let width = n + 1;
    let mut cost = vec![0u32; (m + 1) * width];
    for i in 0..=m {
        cost[i * width] = i as u32;
    }
    for j in 0..=n {
        cost[j] = j as u32;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub_cost = if reference[i - 1] == hypothesis[j - 1] { 0 } else { 1 };
            let diag = cost[(i - 1) * width + (j - 1)] + sub_cost;
            let del = cost[(i - 1) * width + j] + 1;
            let ins = cost[i * width + (j - 1)] + 1;
            cost[i * width + j] = diag.min(del).min(ins);
        }
    }

    // Backtrace from (m, n), preferring match > sub > del > ins on ties.
    let mut ops_rev = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = cost[i * width + j];
        if i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1]
            && cost[(i - 1) * width + (j - 1)] == here
        {
            ops_rev.push(EditOp::Match);
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && cost[(i - 1) * width + (j - 1)] + 1 == here {
            ops_rev.push(EditOp::Sub);
            i -= 1;
            j -= 1;
        } else if i > 0 && cost[(i - 1) * width + j] + 1 == here {
            ops_rev.push(EditOp::Del);
            i -= 1;
        } else {
            ops_rev.push(EditOp::Ins);
            j -= 1;
        }
    }
    ops_rev.reverse();
    let mut alignment = Alignment {
        ops: ops_rev,
        matches: 0,
        subs: 0,
        dels: 0,
        ins: 0,
    };
    for op in &alignment.ops {
        match op {
            EditOp::Match => alignment.matches += 1,
            EditOp::Sub => alignment.subs += 1,
            EditOp::Del => alignment.dels += 1,
            EditOp::Ins => alignment.ins += 1,
        }
    }
    debug_assert_eq!(alignment.matches + alignment.subs + alignment.dels, m);
    debug_assert_eq!(alignment.matches + alignment.subs + alignment.ins, n);
    alignment
}

/// Remove stop words, keeping order.
pub fn filter_stopwords(tokens: &[String], stopwords: &BTreeSet<String>) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !stopwords.contains(*t))
        .cloned()
        .collect()
}

/// Content-word error rate: stop words are removed from both reference and
/// hypothesis, then [`wer`] runs on the residue. A reference that reduces to
/// nothing is the caller's signal to exclude the utterance.
pub fn cwer(
    reference: &[String],
    hypothesis: &[String],
    stopwords: &BTreeSet<String>,
) -> Result<Option<(f64, Alignment)>> {
    let ref_content = filter_stopwords(reference, stopwords);
    if ref_content.is_empty() {
        return Ok(None);
    }
    let hyp_content = filter_stopwords(hypothesis, stopwords);
    Ok(Some(wer(&ref_content, &hyp_content)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn single_substitution_is_one_third() {
        let (rate, a) = wer(&toks("add tide pods"), &toks("add tide pause")).unwrap();
        assert!((rate - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!((a.matches, a.subs, a.dels, a.ins), (2, 1, 0, 0));
    }

    #[test]
    fn identical_strings_are_zero() {
        let (rate, a) = wer(&toks("a b c"), &toks("a b c")).unwrap();
        assert_eq!(rate, 0.0);
        assert_eq!(a.ops, vec![EditOp::Match; 3]);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let (rate, a) = wer(&toks("a b c"), &[]).unwrap();
        assert_eq!(rate, 1.0);
        assert_eq!(a.dels, 3);
    }

    #[test]
    fn empty_reference_is_error() {
        assert!(wer(&[], &toks("a")).is_err());
    }

    #[test]
    fn alignment_counts_satisfy_length_identities() {
        let r = toks("the quick brown fox jumps");
        let h = toks("the brown fax jumps over");
        let (_, a) = wer(&r, &h).unwrap();
        assert_eq!(a.matches + a.subs + a.dels, r.len());
        assert_eq!(a.matches + a.subs + a.ins, h.len());
    }

    #[test]
    fn cwer_filters_both_sides() {
        let stop: BTreeSet<String> = ["i", "want", "the"].iter().map(|s| s.to_string()).collect();
        let (rate, _) = cwer(&toks("i want the pods"), &toks("i want the pause"), &stop)
            .unwrap()
            .unwrap();
        assert_eq!(rate, 1.0);

        // differences only in stop words score zero
        let (rate, _) = cwer(&toks("i want the pods"), &toks("want pods"), &stop)
            .unwrap()
            .unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn all_stopword_reference_is_excluded() {
        let stop: BTreeSet<String> = ["uh", "um"].iter().map(|s| s.to_string()).collect();
        assert!(cwer(&toks("uh um"), &toks("uh"), &stop).unwrap().is_none());
    }

    #[test]
    fn cwer_with_empty_stopword_set_equals_wer() {
        let stop = BTreeSet::new();
        let r = toks("one two three four");
        let h = toks("one two five");
        let (w, _) = wer(&r, &h).unwrap();
        let (c, _) = cwer(&r, &h, &stop).unwrap().unwrap();
        assert_eq!(w, c);
    }

    #[test]
    fn edit_counts_are_symmetric_with_ins_del_swapped() {
        let r = toks("a b c d e");
        let h = toks("a x c e f");
        let (_, fwd) = wer(&r, &h).unwrap();
        let (_, rev) = wer(&h, &r).unwrap();
        assert_eq!(fwd.errors(), rev.errors());
        assert_eq!(fwd.subs, rev.subs);
        assert_eq!(fwd.dels, rev.ins);
        assert_eq!(fwd.ins, rev.dels);
    }
}
