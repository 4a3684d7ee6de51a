//! Verify reverse-mode gradients of the full multi-task objective (decoder,
//! slot head, conditioning, fusion) against central finite differences at
//! 64-bit precision.
//!
//! ```bash
//! cargo run -p convlm --example gradient_check
//! ```

use convlm::model::{init_model, FusionConfig, ModelConfig, SlotHeadConfig};
use convlm::numerics::{grad_check, Graph, Rng, Var};
use convlm::training::{lm_loss, sd_loss, total_loss_graph};

fn main() -> convlm::Result<()> {
    let config = ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: 40,
        dropout: 0.0,
        slot_head: SlotHeadConfig::on(),
        fusion: FusionConfig::on(8),
        ..ModelConfig::default()
    };
    let model = init_model::<f64>(&config, 5)?;
    println!("model: {} parameters in {} tensors", model.param_count(), model.params.len());

    let mut rng = Rng::seed_from(17);
    let tokens: Vec<u32> = (0..10).map(|_| rng.below(40) as u32).collect();
    let targets: Vec<usize> = (0..10).map(|_| rng.below(40)).collect();
    let slot_labels: Vec<usize> = (0..10).map(|_| rng.below(2)).collect();
    let mask = vec![true; 10];
    let embedding: Vec<f64> = (0..8).map(|_| rng.normal()).collect();

    let loss_fn = {
        let model = model.clone();
        move |g: &mut Graph<f64>, vars: &[Var]| {
            let mem = model.empty_memory();
            let mut dropout_rng = Rng::seed_from(0);
            let out = model.forward_graph(g, vars, &tokens, &mem, Some(&embedding), false, &mut dropout_rng)?;
            let lm = lm_loss(g, out.word_logits, &targets, &mask)?;
            let sd = sd_loss(g, out.slot_logits.expect("slot head on"), &slot_labels, &mask)?;
            total_loss_graph(g, lm, Some(sd), 0.8)
        }
    };

    let report = grad_check(&loss_fn, &model.params, 1e-4, 1e-3, Some(6))?;
    for check in &report.per_param {
        println!("  {:<24} rel err {:.3e}  ({} coords)", check.name, check.max_rel_err, check.checked_coords);
    }
    println!(
        "\nmax relative error {:.3e} (tolerance {:.0e}) -> {}",
        report.max_rel_err,
        report.tolerance,
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(())
}
