//! Sequence scoring: iterate a session in segment-sized chunks threading
//! recurrent state, and pull per-token log-probabilities out of the word
//! logits. Dropout is always off here.

use crate::corpus::TokenizedSession;
use crate::error::{Error, Result};
use crate::model::{plan_chunks, LmModel, Memory};
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct ScoredSequence {
    /// `(stream position of the scored token, log p(token | history))`,
    /// for every position selected by the session's loss mask.
    pub token_logprobs: Vec<(usize, f64)>,
    pub total_logprob: f64,
}

/// Stable log-softmax picking one target column, accumulated at f64.
fn row_logprob<R: Real>(row: &[R], target: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for v in row {
        max = max.max(v.to_f64());
    }
    let mut sum = 0.0f64;
    for v in row {
        sum += (v.to_f64() - max).exp();
    }
    row[target].to_f64() - max - sum.ln()
}

/// Log-probabilities of a forced token sequence against a starting memory:
/// position `i` of `targets` is scored given `inputs[..=i]`. Returns the
/// advanced memory. `inputs` and `targets` are the same stream shifted by
/// one; they must have equal length.
pub fn forced_logprobs<R: Real>(
    model: &LmModel<R>,
    inputs: &[u32],
    targets: &[u32],
    memory: &Memory<R>,
    domain_embedding: Option<&[R]>,
) -> Result<(Vec<f64>, Memory<R>)> {
    if inputs.len() != targets.len() {
        return Err(Error::numeric(format!(
            "forced_logprobs: {} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mut mem = memory.clone();
    let mut out = Vec::with_capacity(targets.len());
    let seg = model.config.segment_len;
    let mut start = 0;
    while start < inputs.len() {
        let end = (start + seg).min(inputs.len());
        let fwd = model.forward_segment(&inputs[start..end], &mem, domain_embedding)?;
        for (i, &target) in targets[start..end].iter().enumerate() {
            out.push(row_logprob(fwd.word_logits.row(i), target as usize));
        }
        mem = fwd.new_memory;
        start = end;
    }
    Ok((out, mem))
}

/// Advance memory over a token span without scoring.
pub fn advance_memory<R: Real>(
    model: &LmModel<R>,
    tokens: &[u32],
    memory: &Memory<R>,
    domain_embedding: Option<&[R]>,
) -> Result<Memory<R>> {
    let mut mem = memory.clone();
    let seg = model.config.segment_len;
    let mut start = 0;
    while start < tokens.len() {
        let end = (start + seg).min(tokens.len());
        let fwd = model.forward_segment(&tokens[start..end], &mem, domain_embedding)?;
        mem = fwd.new_memory;
        start = end;
    }
    Ok(mem)
}

/// Score every masked position of a session under the model's context
/// policy: chunked with threaded memory when contextual, restarted at every
/// turn boundary otherwise.
pub fn score_sequence<R: Real>(
    model: &LmModel<R>,
    session: &TokenizedSession,
    domain_embedding: Option<&[R]>,
) -> Result<ScoredSequence> {
    let plans = plan_chunks(
        session.len(),
        &session.turn_boundaries,
        model.config.segment_len,
        model.config.contextual,
    );
    let mut mem = model.empty_memory();
    let mut token_logprobs = Vec::new();
    let mut total = 0.0f64;
    for plan in plans {
        if plan.reset_before {
            mem = model.empty_memory();
        }
        let inputs = &session.token_ids[plan.start..plan.end];
        let fwd = model.forward_segment(inputs, &mem, domain_embedding)?;
        for i in 0..inputs.len() {
            let target_pos = plan.start + i + 1;
            if session.loss_mask[target_pos] {
                let lp = row_logprob(
                    fwd.word_logits.row(i),
                    session.token_ids[target_pos] as usize,
                );
                token_logprobs.push((target_pos, lp));
                total += lp;
            }
        }
        mem = fwd.new_memory;
    }
    Ok(ScoredSequence {
        token_logprobs,
        total_logprob: total,
    })
}

/// Negative log-likelihood sum and masked-position count of one session.
pub fn nll_on_session<R: Real>(
    model: &LmModel<R>,
    session: &TokenizedSession,
    domain_embedding: Option<&[R]>,
) -> Result<(f64, usize)> {
    let scored = score_sequence(model, session, domain_embedding)?;
    Ok((-scored.total_logprob, scored.token_logprobs.len()))
}

/// Argmax slot predictions aligned with stream positions `[0, len - 1)`.
/// The final stream position is never a forward input, so it carries no
/// prediction; masks must exclude it.
pub fn predict_slots<R: Real>(
    model: &LmModel<R>,
    session: &TokenizedSession,
    domain_embedding: Option<&[R]>,
) -> Result<Vec<u8>> {
    let plans = plan_chunks(
        session.len(),
        &session.turn_boundaries,
        model.config.segment_len,
        model.config.contextual,
    );
    let mut mem = model.empty_memory();
    let mut out = vec![0u8; session.len().saturating_sub(1)];
    for plan in plans {
        if plan.reset_before {
            mem = model.empty_memory();
        }
        let inputs = &session.token_ids[plan.start..plan.end];
        let fwd = model.forward_segment(inputs, &mem, domain_embedding)?;
        if let Some(slot_logits) = &fwd.slot_logits {
            for i in 0..inputs.len() {
                out[plan.start + i] = argmax_row(slot_logits, i) as u8;
            }
        }
        mem = fwd.new_memory;
    }
    Ok(out)
}

fn argmax_row<R: Real>(t: &Tensor<R>, row: usize) -> usize {
    let r = t.row(row);
    let mut best = 0;
    for (i, v) in r.iter().enumerate() {
        if *v > r[best] {
            best = i;
        }
    }
    best
}
