//! Decoder language models: a Transformer-XL with segment-level recurrence
//! and relative positional attention, plus a single-direction LSTM baseline.
//! Optional heads: a position-wise slot-detection MLP whose logits condition
//! the next-word distribution, and a domain-embedding fusion layer.

pub mod lstm;
pub mod memory;
pub mod score;
pub mod txl;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Rng, Tensor, Var};

pub use memory::{plan_chunks, ChunkPlan, LstmState, Memory, SegmentMemory};
pub use score::{nll_on_session, score_sequence, ScoredSequence};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Txl,
    LstmBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum FusionConfig {
    Off,
    On {
        d_embed: usize,
        /// Activation applied after the fusion projection.
        activation: Activation,
    },
}

impl FusionConfig {
    pub fn on(d_embed: usize) -> Self {
        FusionConfig::On {
            d_embed,
            activation: Activation::Sigmoid,
        }
    }

    pub fn enabled(&self) -> bool {
        matches!(self, FusionConfig::On { .. })
    }

    pub fn d_embed(&self) -> Option<usize> {
        match self {
            FusionConfig::On { d_embed, .. } => Some(*d_embed),
            FusionConfig::Off => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum SlotHeadConfig {
    Off,
    On {
        /// Total MLP layers; the last is the linear class projection.
        mlp_layers: usize,
        /// Feed slot logits back into the next-word distribution.
        conditioning: bool,
    },
}

impl SlotHeadConfig {
    pub fn on() -> Self {
        SlotHeadConfig::On {
            mlp_layers: 3,
            conditioning: true,
        }
    }

    pub fn enabled(&self) -> bool {
        matches!(self, SlotHeadConfig::On { .. })
    }

    pub fn conditioning(&self) -> bool {
        matches!(
            self,
            SlotHeadConfig::On {
                conditioning: true,
                ..
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub segment_len: usize,
    pub memory_len: usize,
    pub vocab_size: usize,
    pub n_slot_classes: usize,
    pub dropout: f64,
    /// Carry memory across turns of a session. When false, state resets at
    /// every utterance boundary (the non-contextual baselines).
    pub contextual: bool,
    pub fusion: FusionConfig,
    pub slot_head: SlotHeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // Desk-scale defaults; `paper_scale` documents the full-size preset.
        ModelConfig {
            arch: Arch::Txl,
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            segment_len: 25,
            memory_len: 25,
            vocab_size: 2000,
            n_slot_classes: 2,
            dropout: 0.3,
            contextual: true,
            fusion: FusionConfig::Off,
            slot_head: SlotHeadConfig::Off,
        }
    }
}

impl ModelConfig {
    /// Full-size configuration: 4 layers of width 512 with 4 heads, segment
    /// and memory length 25, dropout 0.3, 768-dim fusion embeddings.
    pub fn paper_scale() -> Self {
        ModelConfig {
            d_model: 512,
            d_ff: 2048,
            vocab_size: 25_000,
            ..ModelConfig::default()
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.segment_len < 1 {
            return Err(Error::config("segment_len must be >= 1".to_string()));
        }
        if self.n_layers == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::config("layer sizes must be positive".to_string()));
        }
        if self.vocab_size < crate::corpus::vocab::RESERVED.len() {
            return Err(Error::config(format!(
                "vocab_size {} smaller than the reserved token set",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let SlotHeadConfig::On { mlp_layers, .. } = self.slot_head {
            if mlp_layers < 2 {
                return Err(Error::config("slot head needs at least 2 MLP layers".to_string()));
            }
        }
        if self.n_slot_classes < 2 && self.slot_head.enabled() {
            return Err(Error::config("slot head needs n_slot_classes >= 2".to_string()));
        }
        if self.arch == Arch::LstmBaseline && (self.slot_head.enabled() || self.fusion.enabled()) {
            return Err(Error::config(
                "slot head and fusion are decoder features; the LSTM baseline supports neither"
                    .to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttnLayerIds {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub w_r: ParamId,
    pub u: ParamId,
    pub v: ParamId,
    pub ln_attn_gain: ParamId,
    pub ln_attn_bias: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub ln_ff_gain: ParamId,
    pub ln_ff_bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct SlotHeadIds {
    pub layers: Vec<(ParamId, ParamId)>,
    /// Zero-initialized projection of slot logits into the word path, so an
    /// untrained conditioning path is a no-op.
    pub cond: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub struct FusionIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub struct TxlIds {
    pub embed: ParamId,
    pub layers: Vec<AttnLayerIds>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub slot: Option<SlotHeadIds>,
    pub fusion: Option<FusionIds>,
}

#[derive(Debug, Clone)]
pub struct LstmIds {
    pub embed: ParamId,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Debug, Clone)]
pub enum ArchIds {
    Txl(TxlIds),
    Lstm(LstmIds),
}

/// A model: configuration, parameter store, and the typed parameter handles.
#[derive(Debug, Clone)]
pub struct LmModel<R: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<R>,
    pub arch: ArchIds,
}

/// Forward output on one segment, as plain values (inference path).
#[derive(Debug, Clone)]
pub struct ForwardOutput<R: Real> {
    pub word_logits: Tensor<R>,
    pub slot_logits: Option<Tensor<R>>,
    pub new_memory: Memory<R>,
    pub hidden_last: Tensor<R>,
}

/// Forward output inside a live graph (training path).
pub struct GraphForward<R: Real> {
    pub word_logits: Var,
    pub slot_logits: Option<Var>,
    pub new_memory: Memory<R>,
    pub hidden_last: Var,
}

fn init_matrix<R: Real>(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<R> {
    let data = (0..rows * cols)
        .map(|_| R::from_f64(rng.trunc_normal(INIT_STD)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("sized data")
}

/// Variance-preserving init for the fusion projection. The fused activation
/// replaces the hidden state (no residual around it), so at std 0.02 its
/// output starts out nearly constant and the word path trains an order of
/// magnitude slower; scaling by fan-in keeps positions distinguishable.
fn init_fusion_matrix<R: Real>(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<R> {
    let std = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| R::from_f64(rng.trunc_normal(std)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("sized data")
}

fn zeros_vec<R: Real>(n: usize) -> Tensor<R> {
    Tensor::zeros(vec![n])
}

fn ones_vec<R: Real>(n: usize) -> Tensor<R> {
    Tensor::full(vec![n], R::ONE)
}

/// Deterministic model initialization: truncated normal (std 0.02) for
/// projections and embeddings, zeros for biases, ones for layer-norm gains,
/// zeros for the slot-conditioning projection.
pub fn init_model<R: Real>(config: &ModelConfig, seed: u64) -> Result<LmModel<R>> {
    config.validate()?;
    let mut rng = Rng::seed_from(seed).derive("model-init");
    let mut params = ParamStore::new();
    let d = config.d_model;
    let v = config.vocab_size;

    let arch = match config.arch {
        Arch::Txl => {
            let embed = params.register("embed/table", init_matrix(&mut rng, v, d))?;
            let mut layers = Vec::with_capacity(config.n_layers);
            for l in 0..config.n_layers {
                let p = |name: &str| format!("layer{l}/{name}");
                layers.push(AttnLayerIds {
                    w_q: params.register(p("attn/w_q"), init_matrix(&mut rng, d, d))?,
                    w_k: params.register(p("attn/w_k"), init_matrix(&mut rng, d, d))?,
                    w_v: params.register(p("attn/w_v"), init_matrix(&mut rng, d, d))?,
                    w_o: params.register(p("attn/w_o"), init_matrix(&mut rng, d, d))?,
                    w_r: params.register(p("attn/w_r"), init_matrix(&mut rng, d, d))?,
                    u: params.register(p("attn/u"), init_matrix(&mut rng, 1, d))?,
                    v: params.register(p("attn/v"), init_matrix(&mut rng, 1, d))?,
                    ln_attn_gain: params.register(p("ln_attn/gain"), ones_vec(d))?,
                    ln_attn_bias: params.register(p("ln_attn/bias"), zeros_vec(d))?,
                    ff_w1: params.register(p("ff/w1"), init_matrix(&mut rng, d, config.d_ff))?,
                    ff_b1: params.register(p("ff/b1"), zeros_vec(config.d_ff))?,
                    ff_w2: params.register(p("ff/w2"), init_matrix(&mut rng, config.d_ff, d))?,
                    ff_b2: params.register(p("ff/b2"), zeros_vec(d))?,
                    ln_ff_gain: params.register(p("ln_ff/gain"), ones_vec(d))?,
                    ln_ff_bias: params.register(p("ln_ff/bias"), zeros_vec(d))?,
                });
            }
            let out_w = params.register("out/w", init_matrix(&mut rng, d, v))?;
            let out_b = params.register("out/b", zeros_vec(v))?;
            let slot = match config.slot_head {
                SlotHeadConfig::Off => None,
                SlotHeadConfig::On {
                    mlp_layers,
                    conditioning,
                } => {
                    let mut mlp = Vec::with_capacity(mlp_layers);
                    for j in 0..mlp_layers {
                        let (rows, cols) = if j + 1 == mlp_layers {
                            (d, config.n_slot_classes)
                        } else {
                            (d, d)
                        };
                        let w = params
                            .register(format!("slot/w{j}"), init_matrix(&mut rng, rows, cols))?;
                        let b = params.register(format!("slot/b{j}"), zeros_vec(cols))?;
                        mlp.push((w, b));
                    }
                    let cond = if conditioning {
                        Some(params.register(
                            "slot/cond",
                            Tensor::zeros(vec![config.n_slot_classes, d]),
                        )?)
                    } else {
                        None
                    };
                    Some(SlotHeadIds { layers: mlp, cond })
                }
            };
            let fusion = match config.fusion {
                FusionConfig::Off => None,
                FusionConfig::On { d_embed, .. } => Some(FusionIds {
                    w: params.register("fusion/w", init_fusion_matrix(&mut rng, d + d_embed, d))?,
                    b: params.register("fusion/b", zeros_vec(d))?,
                }),
            };
            ArchIds::Txl(TxlIds {
                embed,
                layers,
                out_w,
                out_b,
                slot,
                fusion,
            })
        }
        Arch::LstmBaseline => {
            let embed = params.register("embed/table", init_matrix(&mut rng, v, d))?;
            let w_x = params.register("lstm/w_x", init_matrix(&mut rng, d, 4 * d))?;
            let w_h = params.register("lstm/w_h", init_matrix(&mut rng, d, 4 * d))?;
            let b = params.register("lstm/b", zeros_vec(4 * d))?;
            let out_w = params.register("out/w", init_matrix(&mut rng, d, v))?;
            let out_b = params.register("out/b", zeros_vec(v))?;
            ArchIds::Lstm(LstmIds {
                embed,
                w_x,
                w_h,
                b,
                out_w,
                out_b,
            })
        }
    };

    Ok(LmModel {
        config: config.clone(),
        params,
        arch,
    })
}

/// Graph bindings for every parameter, indexed by `ParamId`.
pub fn bind_params<R: Real>(
    graph: &mut Graph<R>,
    params: &ParamStore<R>,
    trainable: bool,
) -> Vec<Var> {
    params
        .iter()
        .map(|(_, p)| {
            if trainable && p.trainable {
                graph.leaf(p.tensor.clone())
            } else {
                graph.constant(p.tensor.clone())
            }
        })
        .collect()
}

impl<R: Real> LmModel<R> {
    pub fn empty_memory(&self) -> Memory<R> {
        match self.config.arch {
            Arch::Txl => Memory::Txl(SegmentMemory::empty(self.config.n_layers, self.config.d_model)),
            Arch::LstmBaseline => Memory::Lstm(LstmState::zeros(self.config.d_model)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.total_values()
    }

    /// Training-path forward on one segment: parameters are live graph
    /// leaves (`vars` from [`bind_params`]), memory enters detached.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_graph(
        &self,
        graph: &mut Graph<R>,
        vars: &[Var],
        tokens: &[u32],
        memory: &Memory<R>,
        domain_embedding: Option<&[R]>,
        train: bool,
        rng: &mut Rng,
    ) -> Result<GraphForward<R>> {
        if tokens.is_empty() {
            return Err(Error::numeric("forward on empty segment".to_string()));
        }
        if tokens.len() > self.config.segment_len {
            return Err(Error::numeric(format!(
                "segment of {} tokens exceeds segment_len {}",
                tokens.len(),
                self.config.segment_len
            )));
        }
        if self.config.fusion.enabled() && domain_embedding.is_none() {
            return Err(Error::config(
                "fusion is enabled but no domain embedding was supplied".to_string(),
            ));
        }
        match (&self.arch, memory) {
            (ArchIds::Txl(ids), Memory::Txl(mem)) => txl::forward(
                self, ids, graph, vars, tokens, mem, domain_embedding, train, rng,
            ),
            (ArchIds::Lstm(ids), Memory::Lstm(state)) => {
                lstm::forward(self, ids, graph, vars, tokens, state, train, rng)
            }
            _ => Err(Error::config("memory kind does not match architecture".to_string())),
        }
    }

    /// Inference-path forward: no gradients, dropout off.
    pub fn forward_segment(
        &self,
        tokens: &[u32],
        memory: &Memory<R>,
        domain_embedding: Option<&[R]>,
    ) -> Result<ForwardOutput<R>> {
        let mut graph = Graph::new();
        let vars = bind_params(&mut graph, &self.params, false);
        let mut rng = Rng::seed_from(0);
        let out = self.forward_graph(
            &mut graph,
            &vars,
            tokens,
            memory,
            domain_embedding,
            false,
            &mut rng,
        )?;
        Ok(ForwardOutput {
            word_logits: graph.value(out.word_logits).clone(),
            slot_logits: out.slot_logits.map(|v| graph.value(v).clone()),
            new_memory: out.new_memory,
            hidden_last: graph.value(out.hidden_last).clone(),
        })
    }
}

/// Concatenate a fixed embedding to every timestep of `hidden`, project back
/// to model width and apply the activation. The external embedding enters as
/// a constant: it is an input, not a parameter.
pub fn fuse<R: Real>(
    graph: &mut Graph<R>,
    hidden: Var,
    embedding: &[R],
    w: Var,
    b: Var,
    activation: Activation,
) -> Result<Var> {
    let rows = graph.value(hidden).rows();
    let d_embed = embedding.len();
    if graph.value(w).rows() != graph.value(hidden).cols() + d_embed {
        return Err(Error::Shape {
            op: "fuse",
            lhs: graph.value(hidden).shape().to_vec(),
            rhs: graph.value(w).shape().to_vec(),
        });
    }
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("domain embedding contains non-finite values".to_string()));
    }
    let zeros = graph.constant(Tensor::zeros(vec![rows, d_embed]));
    let e_row = graph.constant(Tensor::from_rows(1, d_embed, embedding.to_vec())?);
    let e_mat = graph.add_row(zeros, e_row)?;
    let cat = graph.concat_cols(&[hidden, e_mat])?;
    let lin = graph.matmul(cat, w)?;
    let pre = graph.add_row(lin, b)?;
    Ok(match activation {
        Activation::Sigmoid => graph.sigmoid(pre),
        Activation::Tanh => graph.tanh(pre),
        Activation::Relu => graph.relu(pre),
    })
}
