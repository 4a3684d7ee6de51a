//! Recurrent state carried across segments and turns: cached hidden states
//! for the Transformer-XL, cell state for the LSTM baseline, and the chunk
//! planner that slices a session stream under a context policy.

use crate::numerics::{Real, Tensor};

/// Per-layer cache of hidden states from previous segments. Entry `l` holds
/// the inputs of layer `l` (entry 0 is the embedding output), each at most
/// `memory_len` rows. The tensors are values, never graph nodes, so no
/// gradient can flow through them.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMemory<R: Real> {
    pub layers: Vec<Tensor<R>>,
    pub tokens_seen: usize,
}

impl<R: Real> SegmentMemory<R> {
    pub fn empty(n_layers: usize, d_model: usize) -> Self {
        SegmentMemory {
            layers: (0..n_layers).map(|_| Tensor::zeros(vec![0, d_model])).collect(),
            tokens_seen: 0,
        }
    }

    /// Rows currently cached (uniform across layers).
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |t| t.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Append this segment's layer inputs, keeping the last `memory_len`
    /// positions of the concatenation.
    pub fn advanced(&self, layer_inputs: &[Tensor<R>], memory_len: usize) -> Self {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (old, new) in self.layers.iter().zip(layer_inputs) {
            let total = old.rows() + new.rows();
            let keep = total.min(memory_len);
            let mut data = Vec::with_capacity(keep * new.cols());
            let skip = total - keep;
            if skip < old.rows() {
                data.extend_from_slice(&old.data()[skip * old.cols()..]);
                data.extend_from_slice(new.data());
            } else {
                data.extend_from_slice(&new.data()[(skip - old.rows()) * new.cols()..]);
            }
            layers.push(
                Tensor::from_rows(keep, new.cols(), data).expect("memory rows consistent"),
            );
        }
        SegmentMemory {
            layers,
            tokens_seen: self.tokens_seen + layer_inputs.first().map_or(0, |t| t.rows()),
        }
    }
}

/// LSTM hidden and cell state, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<R: Real> {
    pub h: Tensor<R>,
    pub c: Tensor<R>,
    pub tokens_seen: usize,
}

impl<R: Real> LstmState<R> {
    pub fn zeros(d_model: usize) -> Self {
        LstmState {
            h: Tensor::zeros(vec![1, d_model]),
            c: Tensor::zeros(vec![1, d_model]),
            tokens_seen: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Memory<R: Real> {
    Txl(SegmentMemory<R>),
    Lstm(LstmState<R>),
}

impl<R: Real> Memory<R> {
    pub fn tokens_seen(&self) -> usize {
        match self {
            Memory::Txl(m) => m.tokens_seen,
            Memory::Lstm(s) => s.tokens_seen,
        }
    }
}

/// One forward chunk over input positions `[start, end)` of a stream; the
/// target for input position `i` is token `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPlan {
    pub start: usize,
    pub end: usize,
    /// Reset memory before this chunk (non-contextual turn boundary).
    pub reset_before: bool,
}

/// Slice a stream of `len` tokens into forward chunks of at most
/// `segment_len` input positions. Contextual sessions are one contiguous
/// run; non-contextual sessions restart at every turn boundary so no state
/// crosses utterances.
pub fn plan_chunks(
    len: usize,
    turn_boundaries: &[usize],
    segment_len: usize,
    contextual: bool,
) -> Vec<ChunkPlan> {
    if len < 2 {
        return Vec::new();
    }
    let input_len = len - 1;
    let mut plans = Vec::new();
    if contextual {
        let mut start = 0;
        while start < input_len {
            let end = (start + segment_len).min(input_len);
            plans.push(ChunkPlan {
                start,
                end,
                reset_before: false,
            });
            start = end;
        }
        return plans;
    }
    for (i, &turn_start) in turn_boundaries.iter().enumerate() {
        let turn_end = turn_boundaries.get(i + 1).copied().unwrap_or(len);
        // Inputs for this turn stop before its last token: that token's
        // target belongs to the next turn.
        let seg_end = turn_end.saturating_sub(1).min(input_len);
        let mut start = turn_start;
        let mut first = true;
        while start < seg_end {
            let end = (start + segment_len).min(seg_end);
            plans.push(ChunkPlan {
                start,
                end,
                reset_before: first,
            });
            first = false;
            start = end;
        }
    }
    plans
}
