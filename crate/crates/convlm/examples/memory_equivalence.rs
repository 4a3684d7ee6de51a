//! The segment-recurrence identity: scoring a sequence in small chunks with
//! threaded memory gives the same per-token log-probabilities as one big
//! segment with the whole history in context, because attention is causal
//! and positions are relative.
//!
//! ```bash
//! cargo run -p convlm --example memory_equivalence
//! ```

use convlm::corpus::TokenizedSession;
use convlm::model::{init_model, score_sequence, LmModel, ModelConfig};
use convlm::numerics::Rng;

fn session(tokens: Vec<u32>) -> TokenizedSession {
    let n = tokens.len();
    TokenizedSession {
        token_ids: tokens,
        slot_labels: vec![0; n],
        loss_mask: vec![true; n],
        turn_boundaries: vec![0],
        unk_count: 0,
    }
}

fn main() -> convlm::Result<()> {
    let chunked_config = ModelConfig {
        segment_len: 5,
        memory_len: 60,
        vocab_size: 100,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let chunked = init_model::<f32>(&chunked_config, 11)?;
    let full = LmModel {
        config: ModelConfig {
            segment_len: 64,
            ..chunked_config
        },
        params: chunked.params.clone(),
        arch: chunked.arch.clone(),
    };

    let mut rng = Rng::seed_from(3);
    let tokens: Vec<u32> = (0..48).map(|_| rng.below(100) as u32).collect();
    let s = session(tokens);

    let a = score_sequence(&chunked, &s, None)?;
    let b = score_sequence(&full, &s, None)?;
    let mut max_abs = 0.0f64;
    for ((_, la), (_, lb)) in a.token_logprobs.iter().zip(&b.token_logprobs) {
        max_abs = max_abs.max((la - lb).abs());
    }
    println!(
        "{} tokens scored in {}-token chunks vs one segment:",
        s.token_ids.len(),
        chunked.config.segment_len
    );
    println!("  chunked total log-prob {:+.6}", a.total_logprob);
    println!("  full    total log-prob {:+.6}", b.total_logprob);
    println!("  max per-token |difference| = {max_abs:.2e}");

    // With memory disabled the chunks really are independent and the
    // equivalence disappears.
    let amnesiac = LmModel {
        config: ModelConfig {
            memory_len: 0,
            ..chunked.config.clone()
        },
        params: chunked.params.clone(),
        arch: chunked.arch.clone(),
    };
    let c = score_sequence(&amnesiac, &s, None)?;
    println!(
        "  memory_len 0 total log-prob {:+.6} (context lost across chunks)",
        c.total_logprob
    );
    Ok(())
}
