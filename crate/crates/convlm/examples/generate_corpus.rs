//! Generate a synthetic two-domain dialogue corpus, print one conversation
//! with its slot annotations, and show the n-best benchmark built from it.
//!
//! ```bash
//! cargo run -p convlm --example generate_corpus
//! ```

use convlm::corpus::{generate_nbest, generate_synthetic, NbestGenConfig, SynthConfig};

fn main() -> convlm::Result<()> {
    let mut config = SynthConfig::two_domain_default();
    config.n_conversations = 50;
    config.thanks_prob = 0.5;
    let corpus = generate_synthetic(&config, 42)?;

    let conv = &corpus.conversations[0];
    println!("conversation {} (domain {:?}):", conv.id, conv.domain.as_deref().unwrap());
    for turn in &conv.turns {
        let slots: Vec<String> = turn
            .slot_spans
            .iter()
            .map(|s| {
                let toks = turn.tokens();
                format!("{}={}", s.tag, toks[s.start..s.end].join(" "))
            })
            .collect();
        println!(
            "  {:>4?} [{:16}] {}{}",
            turn.actor,
            turn.dialogue_act,
            turn.text,
            if slots.is_empty() { String::new() } else { format!("   <- {}", slots.join(", ")) }
        );
    }

    let per_domain: Vec<(String, usize)> = config
        .domains
        .iter()
        .map(|d| {
            let n = corpus
                .conversations
                .iter()
                .filter(|c| c.domain.as_deref() == Some(d.name.as_str()))
                .count();
            (d.name.clone(), n)
        })
        .collect();
    println!("\n{} conversations: {:?}", corpus.conversations.len(), per_domain);

    let nbest = generate_nbest(&config, &corpus, &NbestGenConfig::default(), 42)?;
    let with_confusions = nbest.iter().find(|r| r.hypotheses.len() > 2).unwrap();
    println!("\nn-best list for {} (reference: {:?}):", with_confusions.utterance_id, with_confusions.reference.as_deref().unwrap());
    for (rank, h) in with_confusions.hypotheses.iter().enumerate() {
        println!("  rank {rank}  acoustic {:+.3}  {}", h.acoustic_score, h.text);
    }
    Ok(())
}
