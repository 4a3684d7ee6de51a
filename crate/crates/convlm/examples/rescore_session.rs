//! Context-aware n-best rescoring: after a turn about laundry, a trained
//! contextual model prefers "pods" over the acoustically confusable "pots",
//! while the same list without context falls to the acoustic scores.
//!
//! ```bash
//! cargo run -p convlm --example rescore_session
//! ```

use convlm::corpus::{build_vocab, generate_synthetic, Actor, SynthConfig};
use convlm::model::{init_model, ModelConfig};
use convlm::rescoring::{HypothesisRecord, NBestRecord, RescoreOptions, Rescorer};
use convlm::training::{eval_session_options, prepare_sessions, train, TrainingConfig};

fn main() -> convlm::Result<()> {
    let mut synth = SynthConfig::two_domain_default();
    synth.n_conversations = 800;
    let corpus = generate_synthetic(&synth, 21)?;
    let vocab = build_vocab(&corpus, 2000)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let sessions = prepare_sessions(&corpus, &vocab, false, eval_session_options())?;
    let train_config = TrainingConfig {
        max_steps: 1000,
        eval_every: 1000,
        ..TrainingConfig::default()
    };
    eprintln!("training a small contextual model ({} conversations)...", sessions.len());
    let outcome = train(
        init_model::<f32>(&config, 21)?,
        &sessions,
        &[],
        &train_config,
        None,
    )?;
    let model = outcome.state.model;

    let rescorer = Rescorer::new(&model, &vocab, false, None);
    let nbest = NBestRecord {
        utterance_id: "demo-t3".into(),
        conversation_id: "demo".into(),
        turn_index: 3,
        actor: Actor::User,
        domain: None,
        dialogue_act: Some("inform".into()),
        reference: Some("please add the pods to my cart".into()),
        hypotheses: vec![
            // the first pass slightly favors the wrong word
            HypothesisRecord {
                text: "please add the pots to my cart".into(),
                acoustic_score: -0.1,
            },
            HypothesisRecord {
                text: "please add the pods to my cart".into(),
                acoustic_score: -0.4,
            },
        ],
    };
    let opts = RescoreOptions::default();

    // The same n-best list rescored under two different session histories:
    // the earlier turns decide which confusable survives.
    let context_of = |keyword: &str| -> convlm::Result<_> {
        let mut session = rescorer.open_session("demo", None)?;
        session = rescorer.advance_session(session, "hello how can i help", Actor::Bot, None)?;
        session = rescorer.advance_session(
            session,
            &format!("hi i want {keyword} today"),
            Actor::User,
            None,
        )?;
        session = rescorer.advance_session(
            session,
            &format!("sure which {keyword} product are you after"),
            Actor::Bot,
            None,
        )?;
        Ok(session)
    };
    let cookware_ctx = rescorer.rescore_turn(&context_of("cookware")?, &nbest, &opts)?;
    let laundry_ctx = rescorer.rescore_turn(&context_of("laundry")?, &nbest, &opts)?;

    for (label, turn) in [("cookware context", &cookware_ctx), ("laundry context", &laundry_ctx)] {
        println!("\n{label}:");
        for (rank, h) in turn.ranked.iter().enumerate() {
            println!(
                "  rank {rank}  combined {:+.3}  lm {:+.3}  acoustic {:+.3}  {}",
                h.combined_score, h.lm_logprob, h.hypothesis.acoustic_score, h.hypothesis.text
            );
        }
    }
    Ok(())
}
