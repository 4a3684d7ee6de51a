//! Training objectives: masked LM cross-entropy, slot-detection
//! cross-entropy, and their weighted combination.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Var};

/// Mean negative log-likelihood of the next-word targets over masked
/// positions. Errors on an all-false mask rather than returning zero.
pub fn lm_loss<R: Real>(
    graph: &mut Graph<R>,
    word_logits: Var,
    targets: &[usize],
    loss_mask: &[bool],
) -> Result<Var> {
    graph.masked_cross_entropy(word_logits, targets, loss_mask)
}

/// Mean negative log-likelihood of the gold slot classes over masked
/// positions.
pub fn sd_loss<R: Real>(
    graph: &mut Graph<R>,
    slot_logits: Var,
    slot_labels: &[usize],
    loss_mask: &[bool],
) -> Result<Var> {
    let n_classes = graph.value(slot_logits).cols();
    if let Some(bad) = slot_labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::numeric(format!(
            "slot label {bad} out of range 0..{n_classes}"
        )));
    }
    graph.masked_cross_entropy(slot_logits, slot_labels, loss_mask)
}

/// L = L_lm + alpha_sd * L_sd, as scalars.
pub fn total_loss<R: Real>(l_lm: R, l_sd: R, alpha_sd: R) -> R {
    l_lm + alpha_sd * l_sd
}

/// Graph-side combination of the two loss nodes.
pub fn total_loss_graph<R: Real>(
    graph: &mut Graph<R>,
    l_lm: Var,
    l_sd: Option<Var>,
    alpha_sd: f64,
) -> Result<Var> {
    match l_sd {
        None => Ok(l_lm),
        Some(sd) => {
            let scaled = graph.scale(sd, alpha_sd);
            graph.add(l_lm, scaled)
        }
    }
}
