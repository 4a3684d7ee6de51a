//! Transformer-XL decoder forward pass: per layer, the previous segment's
//! cached hidden states are prepended (detached) to the current segment's
//! keys and values, and attention scores use a relative positional scheme
//! that depends only on the offset between query and key positions.

use crate::error::Result;
use crate::model::{fuse, FusionConfig, GraphForward, LmModel, Memory, TxlIds};
use crate::numerics::{Graph, Real, Rng, Tensor, Var, MASKED_SCORE};

/// Sinusoidal embeddings for relative offsets `0..klen`, row `o` encoding
/// offset `o` (0 = attending to self).
pub fn relative_encoding<R: Real>(klen: usize, d_model: usize) -> Tensor<R> {
    let mut data = vec![R::ZERO; klen * d_model];
    for o in 0..klen {
        for i in 0..d_model / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            let angle = o as f64 * freq;
            data[o * d_model + 2 * i] = R::from_f64(angle.sin());
            data[o * d_model + 2 * i + 1] = R::from_f64(angle.cos());
        }
    }
    Tensor::from_rows(klen, d_model, data).expect("sized data")
}

/// Gather indices mapping the offset-indexed position scores `[T, K]` onto
/// query/key pairs: entry `(t, j)` selects offset `mlen + t - j`, clamped
/// into range for future positions, which the causal mask then removes.
fn offset_indices(qlen: usize, klen: usize, mlen: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(qlen * klen);
    for t in 0..qlen {
        let abs = mlen + t;
        for j in 0..klen {
            let o = abs.saturating_sub(j).min(klen - 1);
            idx.push(o as u32);
        }
    }
    idx
}

/// Additive causal mask over `[T, K]`: position `t` may attend to keys
/// `j <= mlen + t`.
fn causal_mask<R: Real>(qlen: usize, klen: usize, mlen: usize) -> Tensor<R> {
    let neg = R::from_f64(MASKED_SCORE);
    let mut data = vec![R::ZERO; qlen * klen];
    for t in 0..qlen {
        for j in 0..klen {
            if j > mlen + t {
                data[t * klen + j] = neg;
            }
        }
    }
    Tensor::from_rows(qlen, klen, data).expect("sized data")
}

/// The content-independent position term for one head: rows of
/// `(q + v_bias) @ (W_r R)^T` indexed by offset, before the gather. Exposed
/// so tests can assert the term depends only on `i - j`.
pub fn position_scores<R: Real>(
    graph: &mut Graph<R>,
    q_plus_v: Var,
    r_proj_head: Var,
    qlen: usize,
    klen: usize,
    mlen: usize,
) -> Result<Var> {
    let r_t = graph.transpose(r_proj_head)?;
    let by_offset = graph.matmul(q_plus_v, r_t)?;
    graph.gather_per_row(by_offset, &offset_indices(qlen, klen, mlen), klen)
}

#[allow(clippy::too_many_arguments)]
pub fn forward<R: Real>(
    model: &LmModel<R>,
    ids: &TxlIds,
    graph: &mut Graph<R>,
    vars: &[Var],
    tokens: &[u32],
    memory: &super::SegmentMemory<R>,
    domain_embedding: Option<&[R]>,
    train: bool,
    rng: &mut Rng,
) -> Result<GraphForward<R>> {
    let cfg = &model.config;
    let (d, n_heads, dh) = (cfg.d_model, cfg.n_heads, cfg.d_head());
    let qlen = tokens.len();
    let mlen = memory.len();
    let klen = mlen + qlen;
    let scale = 1.0 / (dh as f64).sqrt();

    let ids_usize: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let embedded = graph.embedding_lookup(vars[ids.embed.0], &ids_usize)?;
    let mut h = graph.dropout(embedded, cfg.dropout, train, rng)?;

    // Shared per-segment constants.
    let rel = graph.constant(relative_encoding::<R>(klen, d));
    let mask = graph.constant(causal_mask::<R>(qlen, klen, mlen));
    let gather_idx = offset_indices(qlen, klen, mlen);

    let mut new_layer_inputs: Vec<Tensor<R>> = Vec::with_capacity(cfg.n_layers);
    for (l, layer) in ids.layers.iter().enumerate() {
        // The segment's input to this layer joins the cache after this step.
        new_layer_inputs.push(graph.value(h).clone());
        let mem_const = graph.constant(memory.layers[l].clone());
        let h_cat = graph.concat_rows(&[mem_const, h])?;

        let q = graph.matmul(h, vars[layer.w_q.0])?;
        let k = graph.matmul(h_cat, vars[layer.w_k.0])?;
        let v = graph.matmul(h_cat, vars[layer.w_v.0])?;
        let r_k = graph.matmul(rel, vars[layer.w_r.0])?;

        let mut head_ctx = Vec::with_capacity(n_heads);
        for head in 0..n_heads {
            let off = head * dh;
            let q_h = graph.slice_cols(q, off, dh)?;
            let k_h = graph.slice_cols(k, off, dh)?;
            let v_h = graph.slice_cols(v, off, dh)?;
            let r_h = graph.slice_cols(r_k, off, dh)?;
            let u_h = graph.slice_cols(vars[layer.u.0], off, dh)?;
            let vb_h = graph.slice_cols(vars[layer.v.0], off, dh)?;

            // content term: (q + u) k^T
            let qc = graph.add_row(q_h, u_h)?;
            let k_t = graph.transpose(k_h)?;
            let ac = graph.matmul(qc, k_t)?;
            // position term: (q + v) (W_r R)^T, re-indexed from offsets
            let qp = graph.add_row(q_h, vb_h)?;
            let r_t = graph.transpose(r_h)?;
            let bd_by_offset = graph.matmul(qp, r_t)?;
            let bd = graph.gather_per_row(bd_by_offset, &gather_idx, klen)?;

            let sum = graph.add(ac, bd)?;
            let scaled = graph.scale(sum, scale);
            let masked = graph.add(scaled, mask)?;
            let attn = graph.softmax(masked);
            let attn = graph.dropout(attn, cfg.dropout, train, rng)?;
            head_ctx.push(graph.matmul(attn, v_h)?);
        }
        let ctx = graph.concat_cols(&head_ctx)?;
        let attn_out = graph.matmul(ctx, vars[layer.w_o.0])?;
        let attn_out = graph.dropout(attn_out, cfg.dropout, train, rng)?;
        let res1 = graph.add(h, attn_out)?;
        let h1 = graph.layer_norm(res1, vars[layer.ln_attn_gain.0], vars[layer.ln_attn_bias.0])?;

        let ff_pre = graph.matmul(h1, vars[layer.ff_w1.0])?;
        let ff_pre = graph.add_row(ff_pre, vars[layer.ff_b1.0])?;
        let ff_act = graph.relu(ff_pre);
        let ff_act = graph.dropout(ff_act, cfg.dropout, train, rng)?;
        let ff_out = graph.matmul(ff_act, vars[layer.ff_w2.0])?;
        let ff_out = graph.add_row(ff_out, vars[layer.ff_b2.0])?;
        let ff_out = graph.dropout(ff_out, cfg.dropout, train, rng)?;
        let res2 = graph.add(h1, ff_out)?;
        h = graph.layer_norm(res2, vars[layer.ln_ff_gain.0], vars[layer.ln_ff_bias.0])?;
    }

    let hidden_last = h;

    // Slot detection head: position-wise MLP over the final hidden states.
    let slot_logits = match &ids.slot {
        None => None,
        Some(slot) => {
            let mut s = hidden_last;
            for (j, (w, b)) in slot.layers.iter().enumerate() {
                let lin = graph.matmul(s, vars[w.0])?;
                let lin = graph.add_row(lin, vars[b.0])?;
                if j + 1 < slot.layers.len() {
                    s = graph.relu(lin);
                    s = graph.dropout(s, cfg.dropout, train, rng)?;
                } else {
                    s = lin;
                }
            }
            Some(s)
        }
    };

    // Word path: optional fusion gate, then slot-logit conditioning, then
    // the output projection.
    let mut word_hidden = hidden_last;
    if let Some(fusion) = &ids.fusion {
        let FusionConfig::On { activation, .. } = cfg.fusion else {
            unreachable!("fusion ids exist only when configured on")
        };
        let e = domain_embedding.expect("checked by forward_graph");
        word_hidden = fuse(graph, word_hidden, e, vars[fusion.w.0], vars[fusion.b.0], activation)?;
    }
    if let (Some(slot), Some(sl)) = (&ids.slot, slot_logits) {
        if let Some(cond) = slot.cond {
            let proj = graph.matmul(sl, vars[cond.0])?;
            word_hidden = graph.add(word_hidden, proj)?;
        }
    }
    let word_logits = graph.matmul(word_hidden, vars[ids.out_w.0])?;
    let word_logits = graph.add_row(word_logits, vars[ids.out_b.0])?;

    let new_memory = memory.advanced(&new_layer_inputs, cfg.memory_len);
    Ok(GraphForward {
        word_logits,
        slot_logits,
        new_memory: Memory::Txl(new_memory),
        hidden_last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, Arch, ModelConfig, SlotHeadConfig};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            arch: Arch::Txl,
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            segment_len: 8,
            memory_len: 8,
            vocab_size: 23,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_divisibility_checked() {
        let cfg = tiny_config();
        let a = init_model::<f32>(&cfg, 7).unwrap();
        let b = init_model::<f32>(&cfg, 7).unwrap();
        for ((_, pa), (_, pb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.tensor, pb.tensor, "{}", pa.name);
        }
        let c = init_model::<f32>(&cfg, 8).unwrap();
        assert_ne!(
            a.params.tensor(crate::numerics::ParamId(0)),
            c.params.tensor(crate::numerics::ParamId(0))
        );

        let bad = ModelConfig {
            d_model: 65,
            ..tiny_config()
        };
        let err = init_model::<f32>(&bad, 1).unwrap_err().to_string();
        assert!(err.contains("divisible"), "{err}");
    }

    #[test]
    fn forward_shapes_and_memory_growth() {
        let cfg = tiny_config();
        let model = init_model::<f32>(&cfg, 3).unwrap();
        let mem = model.empty_memory();
        let out = model.forward_segment(&[1, 2, 3, 4, 5], &mem, None).unwrap();
        assert_eq!(out.word_logits.shape(), &[5, 23]);
        assert!(out.slot_logits.is_none());
        let Memory::Txl(new_mem) = &out.new_memory else {
            panic!("txl memory expected")
        };
        assert_eq!(new_mem.len(), 5);
        assert_eq!(new_mem.layers.len(), 2);
        assert_eq!(new_mem.tokens_seen, 5);

        let out2 = model.forward_segment(&[6, 7], &out.new_memory, None).unwrap();
        let Memory::Txl(m2) = &out2.new_memory else {
            panic!()
        };
        assert_eq!(m2.len(), 7);
    }

    #[test]
    fn segment_longer_than_limit_is_rejected() {
        let model = init_model::<f32>(&tiny_config(), 3).unwrap();
        let mem = model.empty_memory();
        let toks: Vec<u32> = (0..9).collect();
        assert!(model.forward_segment(&toks, &mem, None).is_err());
    }

    #[test]
    fn causality_is_exact() {
        let model = init_model::<f32>(&tiny_config(), 5).unwrap();
        let mem = model.empty_memory();
        let base = model.forward_segment(&[1, 2, 3, 4, 5, 6], &mem, None).unwrap();
        let perturbed = model.forward_segment(&[1, 2, 3, 9, 5, 6], &mem, None).unwrap();
        // positions before the perturbed token are bit-identical
        for t in 0..3 {
            assert_eq!(
                base.word_logits.row(t),
                perturbed.word_logits.row(t),
                "position {t} changed"
            );
        }
        // and the perturbed position itself changes
        assert_ne!(base.word_logits.row(3), perturbed.word_logits.row(3));
    }

    #[test]
    fn slot_head_off_matches_conditioning_disabled_word_path() {
        let cfg_off = tiny_config();
        let cfg_on = ModelConfig {
            slot_head: SlotHeadConfig::on(),
            ..tiny_config()
        };
        let plain = init_model::<f64>(&cfg_off, 11).unwrap();
        let with_head = init_model::<f64>(&cfg_on, 11).unwrap();
        let toks = [3u32, 7, 1, 4];
        let a = plain.forward_segment(&toks, &plain.empty_memory(), None).unwrap();
        let b = with_head
            .forward_segment(&toks, &with_head.empty_memory(), None)
            .unwrap();
        assert!(b.slot_logits.is_some());
        assert!(a.slot_logits.is_none());
        // zero-initialized conditioning projection: word path identical
        assert_eq!(a.word_logits, b.word_logits);
    }

    #[test]
    fn position_term_depends_only_on_offset() {
        // Identical query rows: after the offset gather, entries with equal
        // i_abs - j must be equal, including across a memory shift.
        let d = 8usize;
        let (qlen, mlen) = (4usize, 3usize);
        let klen = qlen + mlen;
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::seed_from(9);
        let row: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let q_data: Vec<f64> = (0..qlen).flat_map(|_| row.clone()).collect();
        let q = g.constant(Tensor::from_rows(qlen, d, q_data).unwrap());
        let rel = g.constant(relative_encoding::<f64>(klen, d));
        let w = g.constant(Tensor::from_rows(
            d,
            d,
            (0..d * d).map(|_| rng.normal()).collect(),
        ).unwrap());
        let r_proj = g.matmul(rel, w).unwrap();
        let scores = position_scores(&mut g, q, r_proj, qlen, klen, mlen).unwrap();
        let s = g.value(scores).clone();
        for t1 in 0..qlen {
            for j1 in 0..klen {
                for t2 in 0..qlen {
                    for j2 in 0..klen {
                        let (o1, o2) = ((mlen + t1) as isize - j1 as isize, (mlen + t2) as isize - j2 as isize);
                        if o1 == o2 && o1 >= 0 {
                            let a = s.row(t1)[j1];
                            let b = s.row(t2)[j2];
                            assert!((a - b).abs() < 1e-12, "offset {o1}: {a} vs {b}");
                        }
                    }
                }
            }
        }
    }
}
