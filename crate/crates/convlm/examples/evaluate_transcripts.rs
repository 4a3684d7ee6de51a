//! Word error rate, content-word error rate and matched-pairs significance
//! on a handful of literal transcripts.
//!
//! ```bash
//! cargo run -p convlm --example evaluate_transcripts
//! ```

use std::collections::BTreeSet;

use convlm::evaluation::{
    compare_systems, default_stopwords, error_rates, mpsswe, stopword_hash, wer, UtterancePair,
};

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn main() -> convlm::Result<()> {
    // A single utterance: one substituted content word out of three.
    let (rate, alignment) = wer(&toks("add tide pods"), &toks("add tide pause"))?;
    println!("wer(\"add tide pods\" -> \"add tide pause\") = {rate:.4} ({alignment:?})");

    let stop = default_stopwords();
    println!("default stop-word list hash: {}", stopword_hash(&stop));

    // Two systems transcribing the same five utterances.
    let refs = [
        "i want the pods",
        "add a novel to my cart",
        "lemme grab one latte",
        "hi i want laundry today",
        "please put the skillet in my cart",
    ];
    let system_a = [
        "i want the pots",
        "add a novel to my cart",
        "lemme grab one ladle",
        "hi i want drinks today",
        "please put the skillet in my cart",
    ];
    let system_b = [
        "i want the pods",
        "add a novel to my cart",
        "lemme grab one latte",
        "hi i want drinks today",
        "please put the skillet in my cart",
    ];
    let pairs = |hyps: &[&str]| -> Vec<UtterancePair> {
        refs.iter()
            .zip(hyps)
            .enumerate()
            .map(|(i, (r, h))| UtterancePair::from_text(&format!("u{i}"), r, h))
            .collect()
    };
    let report_a = error_rates(&pairs(&system_a), &stop)?;
    let report_b = error_rates(&pairs(&system_b), &stop)?;
    println!("\nsystem A: wer {:.3} cwer {:.3}", report_a.wer, report_a.cwer);
    println!("system B: wer {:.3} cwer {:.3}", report_b.wer, report_b.cwer);

    let cmp = compare_systems("system-a", &report_a, "system-b", &report_b)?;
    println!(
        "B vs A: cwer reduction {:.1}%, mpsswe z {:.3} p {:.3}",
        100.0 * cmp.cwer_reduction,
        cmp.mpsswe_cwer.z,
        cmp.mpsswe_cwer.p_value
    );

    // The matched-pairs test directly, on per-utterance error counts.
    let errs_a = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    let errs_b = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let result = mpsswe(&errs_a, &errs_b)?;
    println!("\nmpsswe on raw counts: z {:.3}, p {:.4}", result.z, result.p_value);

    // An empty stop-word set makes cwer collapse to wer.
    let empty = BTreeSet::new();
    let plain = error_rates(&pairs(&system_a), &empty)?;
    assert_eq!(plain.wer, plain.cwer);
    println!("empty stop-word set: cwer == wer == {:.3}", plain.cwer);
    Ok(())
}
