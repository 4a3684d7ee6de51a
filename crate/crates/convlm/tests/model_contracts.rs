//! Model-level contracts: closed-form parameter counts, the fusion layer's
//! worked examples, gradient checks of the full objective on tiny models of
//! both architectures, and assorted forward-path identities.

use convlm::corpus::{
    assemble_session, build_vocab, generate_synthetic, parse_corpus_str, SessionOptions,
    SynthConfig,
};
use convlm::embedding::{cosine, pseudo_embedding};
use convlm::evaluation::{perplexity, MaskPolicy};
use convlm::model::{
    fuse, init_model, Activation, Arch, FusionConfig, LmModel, ModelConfig, SlotHeadConfig,
};
use convlm::numerics::{grad_check, Graph, ParamId, Rng, Tensor, Var};
use convlm::training::{lm_loss, sd_loss, total_loss_graph};

/// Hand-counted parameter totals from the configuration alone.
fn closed_form_count(c: &ModelConfig) -> usize {
    let (d, v, f, k) = (c.d_model, c.vocab_size, c.d_ff, c.n_slot_classes);
    match c.arch {
        Arch::Txl => {
            let embed = v * d;
            // per layer: q,k,v,o,r projections, u and v biases, two layer
            // norms, and the feed-forward pair
            let per_layer = 5 * d * d + 2 * d + 2 * (2 * d) + (d * f + f) + (f * d + d);
            let output = d * v + v;
            let slot = match c.slot_head {
                SlotHeadConfig::Off => 0,
                SlotHeadConfig::On {
                    mlp_layers,
                    conditioning,
                } => {
                    let hidden = (mlp_layers - 1) * (d * d + d);
                    let out = d * k + k;
                    let cond = if conditioning { k * d } else { 0 };
                    hidden + out + cond
                }
            };
            let fusion = match c.fusion {
                FusionConfig::Off => 0,
                FusionConfig::On { d_embed, .. } => (d + d_embed) * d + d,
            };
            embed + c.n_layers * per_layer + output + slot + fusion
        }
        Arch::LstmBaseline => {
            let embed = v * d;
            let lstm = d * 4 * d + d * 4 * d + 4 * d;
            let output = d * v + v;
            embed + lstm + output
        }
    }
}

#[test]
fn parameter_count_matches_closed_form() {
    // desk configuration: 4 layers of width 64, vocabulary 2000
    let desk = ModelConfig::default();
    assert_eq!(
        init_model::<f32>(&desk, 1).unwrap().param_count(),
        closed_form_count(&desk)
    );

    let full = ModelConfig {
        slot_head: SlotHeadConfig::on(),
        fusion: FusionConfig::on(32),
        ..ModelConfig::default()
    };
    assert_eq!(
        init_model::<f32>(&full, 1).unwrap().param_count(),
        closed_form_count(&full)
    );

    let lstm = ModelConfig {
        arch: Arch::LstmBaseline,
        ..ModelConfig::default()
    };
    assert_eq!(
        init_model::<f32>(&lstm, 1).unwrap().param_count(),
        closed_form_count(&lstm)
    );
}

#[test]
fn fusion_layer_worked_examples() {
    let d = 4;
    let d_embed = 3;
    let rows = 2;
    let hidden_data = vec![0.3, -0.7, 1.0, 0.2, -0.1, 0.5, 0.4, -0.9];

    // zero weights and bias: sigmoid collapses everything to one half
    let mut g = Graph::<f64>::new();
    let hidden = g.constant(Tensor::from_rows(rows, d, hidden_data.clone()).unwrap());
    let w = g.constant(Tensor::zeros(vec![d + d_embed, d]));
    let b = g.constant(Tensor::zeros(vec![d]));
    let out = fuse(&mut g, hidden, &[0.5, -0.5, 0.25], w, b, Activation::Sigmoid).unwrap();
    assert!(g.value(out).data().iter().all(|&v| (v - 0.5).abs() < 1e-12));

    // zero embedding block: output depends only on the hidden state
    let mut rng = Rng::seed_from(5);
    let mut w_data = vec![0.0f64; (d + d_embed) * d];
    for r in 0..d {
        for c in 0..d {
            w_data[r * d + c] = rng.normal();
        }
    }
    let fuse_with = |e: &[f64], w_data: &[f64]| {
        let mut g = Graph::<f64>::new();
        let hidden = g.constant(Tensor::from_rows(rows, d, hidden_data.clone()).unwrap());
        let w = g.constant(Tensor::from_rows(d + d_embed, d, w_data.to_vec()).unwrap());
        let b = g.constant(Tensor::zeros(vec![d]));
        let out = fuse(&mut g, hidden, e, w, b, Activation::Sigmoid).unwrap();
        g.value(out).clone()
    };
    let a = fuse_with(&[0.0, 0.0, 0.0], &w_data);
    let b2 = fuse_with(&[0.9, -0.4, 0.2], &w_data);
    assert_eq!(a, b2, "zero embedding block must ignore the embedding");

    // a non-zero embedding block separates distinct embeddings
    for r in d..d + d_embed {
        for c in 0..d {
            w_data[r * d + c] = rng.normal();
        }
    }
    let ea = fuse_with(&[1.0, 0.0, 0.0], &w_data);
    let eb = fuse_with(&[0.0, 1.0, 0.0], &w_data);
    assert_ne!(ea, eb, "distinct embeddings must change the gate");

    // dimension mismatch is an error
    let mut g = Graph::<f64>::new();
    let hidden = g.constant(Tensor::from_rows(rows, d, hidden_data).unwrap());
    let w = g.constant(Tensor::zeros(vec![d + d_embed + 1, d]));
    let b = g.constant(Tensor::zeros(vec![d]));
    assert!(fuse(&mut g, hidden, &[0.1, 0.2, 0.3], w, b, Activation::Sigmoid).is_err());
}

fn full_objective_check(config: &ModelConfig, seed: u64, epsilon: f64) -> f64 {
    let model = init_model::<f64>(config, seed).unwrap();
    let mut rng = Rng::seed_from(seed ^ 0xabcd);
    let v = config.vocab_size;
    let tokens: Vec<u32> = (0..4).map(|_| rng.below(v) as u32).collect();
    let targets: Vec<usize> = (0..4).map(|_| rng.below(v)).collect();
    let slots: Vec<usize> = (0..4).map(|_| rng.below(config.n_slot_classes)).collect();
    let embedding: Vec<f64> = match config.fusion {
        FusionConfig::On { d_embed, .. } => (0..d_embed).map(|_| rng.normal() * 0.5).collect(),
        FusionConfig::Off => Vec::new(),
    };
    let m = model.clone();
    let loss_fn = move |g: &mut Graph<f64>, vars: &[Var]| {
        let mut drng = Rng::seed_from(0);
        let emb = if embedding.is_empty() { None } else { Some(embedding.as_slice()) };
        let out = m.forward_graph(g, vars, &tokens, &m.empty_memory(), emb, false, &mut drng)?;
        let lm = lm_loss(g, out.word_logits, &targets, &[true; 4])?;
        let sd = match out.slot_logits {
            Some(sl) => Some(sd_loss(g, sl, &slots, &[true; 4])?),
            None => None,
        };
        total_loss_graph(g, lm, sd, 0.8)
    };
    let report = grad_check(&loss_fn, &model.params, epsilon, 1e-3, None).unwrap();
    assert!(
        report.pass,
        "{:?}: max rel err {} in {:?}",
        config.arch,
        report.max_rel_err,
        report.worst().map(|w| w.name.clone())
    );
    report.max_rel_err
}

/// Full combined objective on a 4-token batch of a tiny (width 8) decoder
/// with slot head and fusion: reverse mode matches central differences at
/// the coarse 1e-3 step in 64-bit mode.
#[test]
fn tiny_decoder_full_objective_gradient_check() {
    let config = ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size: 20,
        dropout: 0.0,
        slot_head: SlotHeadConfig::on(),
        fusion: FusionConfig::on(4),
        ..ModelConfig::default()
    };
    let err = full_objective_check(&config, 3, 1e-3);
    assert!(err <= 1e-3, "max rel err {err}");
}

/// The LSTM baseline's gradient on a 4-token batch passes at the same bar.
#[test]
fn lstm_gradient_check() {
    let config = ModelConfig {
        arch: Arch::LstmBaseline,
        d_model: 8,
        vocab_size: 20,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let err = full_objective_check(&config, 7, 1e-3);
    assert!(err <= 1e-3, "max rel err {err}");
}

/// With memory_len = 0 a segment is processed exactly like a vanilla causal
/// transformer: stale state cannot leak in.
#[test]
fn zero_memory_length_is_vanilla_transformer() {
    let config = ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        memory_len: 0,
        vocab_size: 30,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let model = init_model::<f64>(&config, 9).unwrap();
    let first = model.forward_segment(&[1, 2, 3], &model.empty_memory(), None).unwrap();
    let stale = model.forward_segment(&[7, 8, 9], &first.new_memory, None).unwrap();
    let fresh = model.forward_segment(&[7, 8, 9], &model.empty_memory(), None).unwrap();
    assert_eq!(stale.word_logits, fresh.word_logits);
}

/// A model whose output projection is zeroed is uniform, so its perplexity
/// is exactly the vocabulary size.
#[test]
fn uniform_model_perplexity_equals_vocab_size() {
    let mut synth = SynthConfig::two_domain_default();
    synth.n_conversations = 10;
    let corpus = generate_synthetic(&synth, 2).unwrap();
    let vocab = build_vocab(&corpus, 2000).unwrap();
    let config = ModelConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: vocab.len(),
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let mut model: LmModel<f64> = init_model(&config, 2).unwrap();
    for name in ["out/w", "out/b"] {
        let id = model.params.by_name(name).unwrap();
        let t = model.params.tensor_mut(id);
        *t = Tensor::zeros(t.shape().to_vec());
    }
    let ppl = perplexity(&model, &corpus, &vocab, false, MaskPolicy::UserWords, None, None).unwrap();
    assert!(
        (ppl - vocab.len() as f64).abs() / (vocab.len() as f64) < 1e-6,
        "uniform ppl {ppl} vs vocab {}",
        vocab.len()
    );
    let _ = ParamId(0);
}

/// A six-turn conversation assembles into six turn-boundary indices.
#[test]
fn six_turn_conversation_has_six_boundaries() {
    let file = concat!(
        r#"{"schema_version":1,"dialogue_acts":["general-welcome","inform-intent","request","inform","thank-you"],"slot_tags":["entity"]}"#,
        "\n",
        r#"{"id":"c1","turns":[{"actor":"bot","text":"how can i help you today","dialogue_act":"general-welcome"},{"actor":"user","text":"hi i want to track my online shopping order","dialogue_act":"inform-intent"},{"actor":"bot","text":"sure what is the order number","dialogue_act":"request"},{"actor":"user","text":"my order number is abcdef","dialogue_act":"inform"},{"actor":"bot","text":"your order is scheduled to be delivered tomorrow","dialogue_act":"inform"},{"actor":"user","text":"thanks","dialogue_act":"thank-you"}]}"#,
        "\n"
    );
    let corpus = parse_corpus_str(file, "test").unwrap();
    let vocab = build_vocab(&corpus, 200).unwrap();
    let session = assemble_session(
        &corpus.conversations[0],
        &corpus,
        &vocab,
        SessionOptions::default(),
    )
    .unwrap();
    assert_eq!(session.turn_boundaries.len(), 6);
}

/// Pseudo embeddings computed on generated corpora whose two domains share
/// almost no vocabulary have cosine similarity below one half.
#[test]
fn generated_disjoint_domains_have_low_cosine() {
    let mut config = SynthConfig::two_domain_default();
    // Shrink the shared turns to almost nothing so the domains' content
    // vocabularies are genuinely disjoint.
    config.greeting_templates = vec!["hello".into()];
    config.intent_templates = vec!["gimme {category}".into()];
    config.n_conversations = 200;
    let corpus = generate_synthetic(&config, 6).unwrap();
    let split = |name: &str| -> Vec<_> {
        corpus
            .conversations
            .iter()
            .filter(|c| c.domain.as_deref() == Some(name))
            .cloned()
            .collect()
    };
    let retail = pseudo_embedding("retail", &split("retail"), 32, 6).unwrap();
    let fastfood = pseudo_embedding("fastfood", &split("fastfood"), 32, 6).unwrap();
    let cos = cosine(&retail.vector, &fastfood.vector);
    assert!(cos.abs() < 0.5, "cosine {cos}");
}
