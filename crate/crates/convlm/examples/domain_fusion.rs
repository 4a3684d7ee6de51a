//! On-the-fly domain adaptation: a fusion model trained on two domains
//! scores a retail test set better when handed retail's embedding than when
//! handed the fast-food one.
//!
//! ```bash
//! cargo run -p convlm --example domain_fusion
//! ```

use convlm::corpus::{build_vocab, generate_synthetic, Corpus, SynthConfig};
use convlm::embedding::{cosine, pseudo_table};
use convlm::evaluation::{perplexity, MaskPolicy};
use convlm::model::{init_model, FusionConfig, ModelConfig};
use convlm::training::{prepare_sessions, train, TrainingConfig};

fn main() -> convlm::Result<()> {
    let mut synth = SynthConfig::two_domain_default();
    synth.n_conversations = 400;
    let corpus = generate_synthetic(&synth, 33)?;
    let table = pseudo_table(&corpus.conversations, 32, 33)?;
    let retail = &table.get("retail").unwrap().vector;
    let fastfood = &table.get("fastfood").unwrap().vector;
    println!(
        "pseudo embeddings: dim {}, cosine(retail, fastfood) = {:.3}",
        table.dim(),
        cosine(retail, fastfood)
    );

    let vocab = build_vocab(&corpus, 2000)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        fusion: FusionConfig::on(32),
        ..ModelConfig::default()
    };
    let sessions = prepare_sessions(&corpus, &vocab, false, Default::default())?;
    let train_config = TrainingConfig {
        max_steps: 1200,
        eval_every: 1200,
        learning_rate: 3e-3,
        ..TrainingConfig::default()
    };
    eprintln!("training a fusion model for {} steps...", train_config.max_steps);
    let outcome = train(
        init_model::<f32>(&config, 33)?,
        &sessions,
        &[],
        &train_config,
        Some(&table),
    )?;
    let model = outcome.state.model;

    let retail_test = Corpus {
        header: corpus.header.clone(),
        conversations: corpus
            .conversations
            .iter()
            .filter(|c| c.domain.as_deref() == Some("retail"))
            .take(40)
            .cloned()
            .collect(),
    };
    for forced in ["retail", "fastfood"] {
        let ppl = perplexity(
            &model,
            &retail_test,
            &vocab,
            false,
            MaskPolicy::UserWords,
            Some(&table),
            Some(forced),
        )?;
        println!("retail test, {forced:>8} embedding: ppl {ppl:.3}");
    }
    Ok(())
}
