//! Checkpointing: save a full training state mid-run, restore it, and show
//! the resumed run continuing bit-identically (64-bit mode).
//!
//! ```bash
//! cargo run -p convlm --example checkpoint_resume
//! ```

use convlm::corpus::{build_vocab, generate_synthetic, SynthConfig};
use convlm::model::{init_model, ModelConfig};
use convlm::numerics::ParamId;
use convlm::training::{
    load_train_state, prepare_sessions, save_train_state, train_loop, TrainState, TrainingConfig,
};

fn main() -> convlm::Result<()> {
    let mut synth = SynthConfig::two_domain_default();
    synth.n_conversations = 60;
    let corpus = generate_synthetic(&synth, 5)?;
    let vocab = build_vocab(&corpus, 2000)?;
    let config = ModelConfig {
        n_layers: 2,
        d_model: 32,
        d_ff: 64,
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let mut train_config = TrainingConfig {
        max_steps: 6,
        eval_every: 100,
        ..TrainingConfig::default()
    };
    let sessions = prepare_sessions(&corpus, &vocab, false, train_config.session_options())?;

    // Uninterrupted 12-step reference run at f64.
    let state = TrainState::new(init_model::<f64>(&config, 5)?, &train_config, sessions.len());
    train_config.max_steps = 12;
    let reference = train_loop(state, &sessions, &[], &train_config, None)?;

    // Stop at 6, checkpoint, reload, continue to 12.
    train_config.max_steps = 6;
    let state = TrainState::new(init_model::<f64>(&config, 5)?, &train_config, sessions.len());
    let halfway = train_loop(state, &sessions, &[], &train_config, None)?;
    let dir = std::env::temp_dir().join("convlm_resume_demo");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("state.ckpt");
    save_train_state(&path, &halfway.state, &serde_json::Value::Null)?;
    println!("saved state at step {} to {}", halfway.state.step, path.display());

    let (restored, _) = load_train_state::<f64>(&path, &sessions)?;
    train_config.max_steps = 12;
    let resumed = train_loop(restored, &sessions, &[], &train_config, None)?;

    let mut identical = true;
    for i in 0..reference.state.model.params.len() {
        let a = reference.state.model.params.tensor(ParamId(i));
        let b = resumed.state.model.params.tensor(ParamId(i));
        if a.data().iter().zip(b.data()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            identical = false;
        }
    }
    println!(
        "step-12 parameters of resumed vs uninterrupted run: {}",
        if identical { "bit-identical" } else { "DIFFERENT" }
    );
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
