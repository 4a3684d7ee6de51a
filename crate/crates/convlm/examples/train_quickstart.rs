//! Train a small contextual Transformer-XL on a synthetic two-domain corpus
//! and watch validation perplexity fall.
//!
//! ```bash
//! cargo run -p convlm --example train_quickstart
//! ```

use convlm::corpus::{build_vocab, generate_synthetic, SynthConfig};
use convlm::model::{init_model, ModelConfig, SlotHeadConfig};
use convlm::training::{prepare_sessions, train, eval_session_options, TrainingConfig};

fn main() -> convlm::Result<()> {
    let mut synth = SynthConfig::two_domain_default();
    synth.n_conversations = 400;
    let corpus = generate_synthetic(&synth, 7)?;
    let split = (corpus.conversations.len() * 9) / 10;
    let mut train_corpus = corpus.clone();
    let valid_convs = train_corpus.conversations.split_off(split);
    let mut valid_corpus = corpus.clone();
    valid_corpus.conversations = valid_convs;

    let vocab = build_vocab(&train_corpus, 2000)?;
    println!("corpus: {} train / {} valid conversations, vocab {}",
        train_corpus.conversations.len(), valid_corpus.conversations.len(), vocab.len());

    let model_config = ModelConfig {
        vocab_size: vocab.len(),
        slot_head: SlotHeadConfig::on(),
        ..ModelConfig::default()
    };
    let model = init_model::<f32>(&model_config, 7)?;
    println!("model: {} parameters", model.param_count());

    let train_config = TrainingConfig {
        max_steps: 150,
        eval_every: 50,
        ..TrainingConfig::default()
    };
    let train_sessions = prepare_sessions(&train_corpus, &vocab, false, train_config.session_options())?;
    let val_sessions = prepare_sessions(&valid_corpus, &vocab, false, eval_session_options())?;

    let start = std::time::Instant::now();
    let outcome = train(model, &train_sessions, &val_sessions, &train_config, None)?;
    for m in &outcome.metrics {
        println!(
            "step {:4}  {:5}  ppl {:8.3}  slot_f1 {}",
            m.step,
            m.split,
            m.ppl.unwrap_or(f64::NAN),
            m.slot_f1.map_or("   -".to_string(), |v| format!("{v:.3}")),
        );
    }
    println!("trained {} steps in {:.1?}", outcome.state.step, start.elapsed());
    Ok(())
}
