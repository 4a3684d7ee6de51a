//! LSTM baseline: embedding, a single LSTM layer, and a projection to the
//! vocabulary. State carries across chunks as detached values; the
//! non-contextual variant resets it at every utterance boundary via the
//! chunk planner.

use crate::error::Result;
use crate::model::{GraphForward, LmModel, LstmIds, LstmState, Memory};
use crate::numerics::{Graph, Real, Rng, Var};

#[allow(clippy::too_many_arguments)]
pub fn forward<R: Real>(
    model: &LmModel<R>,
    ids: &LstmIds,
    graph: &mut Graph<R>,
    vars: &[Var],
    tokens: &[u32],
    state: &LstmState<R>,
    train: bool,
    rng: &mut Rng,
) -> Result<GraphForward<R>> {
    let cfg = &model.config;
    let d = cfg.d_model;
    let mut h_prev = graph.constant(state.h.clone());
    let mut c_prev = graph.constant(state.c.clone());

    let mut hidden_rows = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let x = graph.embedding_lookup(vars[ids.embed.0], &[tok as usize])?;
        let x = graph.dropout(x, cfg.dropout, train, rng)?;
        let zx = graph.matmul(x, vars[ids.w_x.0])?;
        let zh = graph.matmul(h_prev, vars[ids.w_h.0])?;
        let z = graph.add(zx, zh)?;
        let z = graph.add_row(z, vars[ids.b.0])?;
        let i_gate = {
            let s = graph.slice_cols(z, 0, d)?;
            graph.sigmoid(s)
        };
        let f_gate = {
            let s = graph.slice_cols(z, d, d)?;
            graph.sigmoid(s)
        };
        let g_gate = {
            let s = graph.slice_cols(z, 2 * d, d)?;
            graph.tanh(s)
        };
        let o_gate = {
            let s = graph.slice_cols(z, 3 * d, d)?;
            graph.sigmoid(s)
        };
        let forgotten = graph.mul(f_gate, c_prev)?;
        let written = graph.mul(i_gate, g_gate)?;
        let c = graph.add(forgotten, written)?;
        let c_act = graph.tanh(c);
        let h = graph.mul(o_gate, c_act)?;
        hidden_rows.push(h);
        h_prev = h;
        c_prev = c;
    }
    let hidden = graph.concat_rows(&hidden_rows)?;
    let hidden_do = graph.dropout(hidden, cfg.dropout, train, rng)?;
    let logits = graph.matmul(hidden_do, vars[ids.out_w.0])?;
    let word_logits = graph.add_row(logits, vars[ids.out_b.0])?;

    let new_state = LstmState {
        h: graph.value(h_prev).clone(),
        c: graph.value(c_prev).clone(),
        tokens_seen: state.tokens_seen + tokens.len(),
    };
    Ok(GraphForward {
        word_logits,
        slot_logits: None,
        new_memory: Memory::Lstm(new_state),
        hidden_last: hidden,
    })
}
