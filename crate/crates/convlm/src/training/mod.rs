//! Multi-task training: language-model and slot-detection losses over
//! batched conversation streams, truncated backpropagation at segment
//! boundaries via the stop-gradient memory, adaptive optimization with
//! gradient clipping, and checkpointable state.

pub mod loss;
pub mod optim;
pub mod state;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    assemble_session, augment_dialogue_acts, Corpus, SessionOptions, TokenizedSession, Vocabulary,
};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluation::slot_f1;
use crate::model::{bind_params, plan_chunks, ChunkPlan, LmModel, Memory};
use crate::numerics::{Graph, Real, Rng, Tensor, Var};

pub use loss::{lm_loss, sd_loss, total_loss, total_loss_graph};
pub use optim::{OptState, OptimizerKind};
pub use state::{load_model, load_train_state, save_model, save_train_state};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Weight of the slot-detection loss in the combined objective.
    pub alpha_sd: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Independent conversation streams per step, each with its own memory.
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
    /// Global-norm gradient clip; 0 disables.
    pub grad_clip_norm: f64,
    pub loss_on_bot: bool,
    pub loss_on_da: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            alpha_sd: 0.8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            batch_size: 8,
            max_steps: 500,
            eval_every: 100,
            seed: 0,
            grad_clip_norm: 1.0,
            loss_on_bot: true,
            loss_on_da: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_sd < 0.0 {
            return Err(Error::config("alpha_sd must be >= 0".to_string()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be > 0".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1".to_string()));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn session_options(&self) -> SessionOptions {
        SessionOptions {
            loss_on_bot: self.loss_on_bot,
            loss_on_da: self.loss_on_da,
        }
    }
}

/// A tokenized session plus the metadata training needs.
#[derive(Debug, Clone)]
pub struct TrainSession {
    pub session: TokenizedSession,
    pub domain: Option<String>,
}

/// Tokenize a corpus for training or evaluation: optional dialogue-act
/// augmentation, then session assembly under the given mask options.
pub fn prepare_sessions(
    corpus: &Corpus,
    vocab: &Vocabulary,
    da_enabled: bool,
    opts: SessionOptions,
) -> Result<Vec<TrainSession>> {
    corpus
        .conversations
        .iter()
        .map(|conv| {
            let augmented = augment_dialogue_acts(conv, da_enabled);
            Ok(TrainSession {
                session: assemble_session(&augmented, corpus, vocab, opts)?,
                domain: conv.domain.clone(),
            })
        })
        .collect()
}

/// Evaluation masks: user-turn words only, so actor tokens, act-tag prefixes
/// and bot turns never inflate reported perplexity.
pub fn eval_session_options() -> SessionOptions {
    SessionOptions {
        loss_on_bot: false,
        loss_on_da: false,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub split: String,
    pub ppl: Option<f64>,
    pub slot_f1: Option<f64>,
    pub loss_lm: Option<f64>,
    pub loss_sd: Option<f64>,
}

/// Cursor over one conversation stream.
#[derive(Debug, Clone)]
pub struct StreamState<R: Real> {
    pub conv: usize,
    pub chunk: usize,
    pub plans: Vec<ChunkPlan>,
    pub memory: Memory<R>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoaderState {
    pub order: Vec<u32>,
    pub next: usize,
    pub epoch: u64,
}

/// Everything training mutates, fully serializable so a resumed run
/// continues bit-identically.
#[derive(Debug, Clone)]
pub struct TrainState<R: Real> {
    pub step: u64,
    pub model: LmModel<R>,
    pub opt: OptState<R>,
    pub data_rng: Rng,
    pub dropout_rng: Rng,
    pub loader: LoaderState,
    pub streams: Vec<StreamState<R>>,
    pub best_val_ppl: Option<f64>,
    pub best_params: Option<crate::numerics::ParamStore<R>>,
}

impl<R: Real> TrainState<R> {
    pub fn new(model: LmModel<R>, config: &TrainingConfig, n_sessions: usize) -> Self {
        let opt = OptState::new(config.optimizer, &model.params);
        let root = Rng::seed_from(config.seed);
        let mut data_rng = root.derive("data-order");
        let dropout_rng = root.derive("dropout");
        let mut order: Vec<u32> = (0..n_sessions as u32).collect();
        data_rng.shuffle(&mut order);
        let streams = (0..config.batch_size)
            .map(|_| StreamState {
                conv: usize::MAX,
                chunk: 0,
                plans: Vec::new(),
                memory: model.empty_memory(),
            })
            .collect();
        TrainState {
            step: 0,
            model,
            opt,
            data_rng,
            dropout_rng,
            loader: LoaderState {
                order,
                next: 0,
                epoch: 0,
            },
            streams,
            best_val_ppl: None,
            best_params: None,
        }
    }

    /// Model with the best-validation parameters (falls back to current).
    pub fn best_model(&self) -> LmModel<R> {
        let mut model = self.model.clone();
        if let Some(best) = &self.best_params {
            model.params = best.clone();
        }
        model
    }
}

fn next_conversation<R: Real>(
    state_loader: &mut LoaderState,
    data_rng: &mut Rng,
    sessions: &[TrainSession],
    model: &LmModel<R>,
) -> (usize, Vec<ChunkPlan>, Memory<R>) {
    if state_loader.next >= state_loader.order.len() {
        state_loader.epoch += 1;
        state_loader.next = 0;
        data_rng.shuffle(&mut state_loader.order);
    }
    let conv = state_loader.order[state_loader.next] as usize;
    state_loader.next += 1;
    let plans = plan_chunks(
        sessions[conv].session.len(),
        &sessions[conv].session.turn_boundaries,
        model.config.segment_len,
        model.config.contextual,
    );
    (conv, plans, model.empty_memory())
}

fn domain_vector<R: Real>(
    model: &LmModel<R>,
    embeddings: Option<&EmbeddingTable>,
    domain: &Option<String>,
) -> Result<Option<Vec<R>>> {
    if !model.config.fusion.enabled() {
        return Ok(None);
    }
    let table = embeddings.ok_or_else(|| {
        Error::config("fusion model trained without an embedding provider".to_string())
    })?;
    let tag = domain.as_deref().ok_or_else(|| {
        Error::data("fusion model needs a domain tag on every conversation".to_string())
    })?;
    let vec = table.vector_as::<R>(tag).ok_or_else(|| {
        Error::data(format!("domain {tag:?} is not in the embedding table"))
    })?;
    Ok(Some(vec))
}

/// Validation pass: masked perplexity, slot F1, mean losses.
pub fn evaluate_sessions<R: Real>(
    model: &LmModel<R>,
    sessions: &[TrainSession],
    embeddings: Option<&EmbeddingTable>,
) -> Result<MetricRecord> {
    let mut nll_sum = 0.0f64;
    let mut count = 0usize;
    let mut predictions = Vec::new();
    let mut gold = Vec::new();
    let mut mask = Vec::new();
    for ts in sessions {
        let emb = domain_vector(model, embeddings, &ts.domain)?;
        let (nll, n) = crate::model::nll_on_session(model, &ts.session, emb.as_deref())?;
        nll_sum += nll;
        count += n;
        if model.config.slot_head.enabled() {
            let preds = crate::model::score::predict_slots(model, &ts.session, emb.as_deref())?;
            let upto = preds.len();
            predictions.extend_from_slice(&preds);
            gold.extend(ts.session.slot_labels[..upto].iter().copied());
            mask.extend(ts.session.loss_mask[..upto].iter().copied());
        }
    }
    if count == 0 {
        return Err(Error::data("validation produced zero scored tokens".to_string()));
    }
    let mean_nll = nll_sum / count as f64;
    let f1 = if model.config.slot_head.enabled() {
        Some(slot_f1(&predictions, &gold, &mask)?.f1)
    } else {
        None
    };
    Ok(MetricRecord {
        step: 0,
        split: "valid".to_string(),
        ppl: Some(mean_nll.exp()),
        slot_f1: f1,
        loss_lm: Some(mean_nll),
        loss_sd: None,
    })
}

pub struct TrainOutcome<R: Real> {
    pub state: TrainState<R>,
    pub metrics: Vec<MetricRecord>,
}

/// Train from scratch.
pub fn train<R: Real>(
    model: LmModel<R>,
    train_sessions: &[TrainSession],
    val_sessions: &[TrainSession],
    config: &TrainingConfig,
    embeddings: Option<&EmbeddingTable>,
) -> Result<TrainOutcome<R>> {
    config.validate()?;
    if train_sessions.is_empty() {
        return Err(Error::data("training corpus is empty".to_string()));
    }
    let state = TrainState::new(model, config, train_sessions.len());
    train_loop(state, train_sessions, val_sessions, config, embeddings)
}

/// Continue a (possibly restored) run until `config.max_steps`.
pub fn train_loop<R: Real>(
    mut state: TrainState<R>,
    train_sessions: &[TrainSession],
    val_sessions: &[TrainSession],
    config: &TrainingConfig,
    embeddings: Option<&EmbeddingTable>,
) -> Result<TrainOutcome<R>> {
    let mut metrics = Vec::new();
    let slot_on = state.model.config.slot_head.enabled();

    let run_eval = |state: &mut TrainState<R>, metrics: &mut Vec<MetricRecord>| -> Result<()> {
        if val_sessions.is_empty() {
            return Ok(());
        }
        let mut rec = evaluate_sessions(&state.model, val_sessions, embeddings)?;
        rec.step = state.step;
        let improved = match (state.best_val_ppl, rec.ppl) {
            (None, Some(p)) => Some(p),
            (Some(best), Some(p)) if p < best => Some(p),
            _ => None,
        };
        if let Some(p) = improved {
            state.best_val_ppl = Some(p);
            state.best_params = Some(state.model.params.clone());
        }
        metrics.push(rec);
        Ok(())
    };

    if state.step == 0 {
        run_eval(&mut state, &mut metrics)?;
    }

    let mut window_lm = 0.0f64;
    let mut window_sd = 0.0f64;
    let mut window_n = 0u64;

    while state.step < config.max_steps {
        let mut graph = Graph::new();
        let vars = bind_params(&mut graph, &state.model.params, true);
        let mut lm_sums: Vec<Var> = Vec::new();
        let mut sd_sums: Vec<Var> = Vec::new();
        let mut lm_count = 0usize;
        let mut sd_count = 0usize;
        let mut batch_convs = Vec::with_capacity(config.batch_size);

        for si in 0..state.streams.len() {
            if state.streams[si].conv == usize::MAX
                || state.streams[si].chunk >= state.streams[si].plans.len()
            {
                let (conv, plans, memory) = next_conversation(
                    &mut state.loader,
                    &mut state.data_rng,
                    train_sessions,
                    &state.model,
                );
                let stream = &mut state.streams[si];
                stream.conv = conv;
                stream.chunk = 0;
                stream.plans = plans;
                stream.memory = memory;
            }
            let plan = state.streams[si].plans[state.streams[si].chunk];
            if plan.reset_before {
                state.streams[si].memory = state.model.empty_memory();
            }
            let conv = state.streams[si].conv;
            batch_convs.push(conv);
            let ts = &train_sessions[conv];
            let emb = domain_vector(&state.model, embeddings, &ts.domain)?;

            let inputs = &ts.session.token_ids[plan.start..plan.end];
            let targets: Vec<usize> = ts.session.token_ids[plan.start + 1..plan.end + 1]
                .iter()
                .map(|&t| t as usize)
                .collect();
            let lm_mask = &ts.session.loss_mask[plan.start + 1..plan.end + 1];
            let sd_labels: Vec<usize> = ts.session.slot_labels[plan.start..plan.end]
                .iter()
                .map(|&l| l as usize)
                .collect();
            let sd_mask = &ts.session.loss_mask[plan.start..plan.end];

            let memory = state.streams[si].memory.clone();
            let out = state.model.forward_graph(
                &mut graph,
                &vars,
                inputs,
                &memory,
                emb.as_deref(),
                true,
                &mut state.dropout_rng,
            )?;
            lm_sums.push(graph.masked_nll_sum(out.word_logits, &targets, lm_mask)?);
            lm_count += lm_mask.iter().filter(|&&m| m).count();
            if let Some(slot_logits) = out.slot_logits {
                sd_sums.push(graph.masked_nll_sum(slot_logits, &sd_labels, sd_mask)?);
                sd_count += sd_mask.iter().filter(|&&m| m).count();
            }
            state.streams[si].memory = out.new_memory;
            state.streams[si].chunk += 1;
        }

        if lm_count == 0 {
            return Err(Error::numeric(format!(
                "step {}: batch contains no scored positions",
                state.step
            )));
        }
        let mut lm_total = lm_sums[0];
        for s in &lm_sums[1..] {
            lm_total = graph.add(lm_total, *s)?;
        }
        let lm_mean = graph.scale(lm_total, 1.0 / lm_count as f64);
        let sd_mean = if slot_on && sd_count > 0 {
            let mut sd_total = sd_sums[0];
            for s in &sd_sums[1..] {
                sd_total = graph.add(sd_total, *s)?;
            }
            Some(graph.scale(sd_total, 1.0 / sd_count as f64))
        } else {
            None
        };
        let total = total_loss_graph(&mut graph, lm_mean, sd_mean, config.alpha_sd)?;

        let loss_value = graph.value(total).item().to_f64();
        if !loss_value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss {loss_value} at step {} (batch conversations {batch_convs:?})",
                state.step
            )));
        }
        window_lm += graph.value(lm_mean).item().to_f64();
        window_sd += sd_mean.map_or(0.0, |v| graph.value(v).item().to_f64());
        window_n += 1;

        graph.backward(total)?;
        let mut grads: Vec<Option<Tensor<R>>> =
            vars.iter().map(|v| graph.grad(*v).cloned()).collect();
        if config.grad_clip_norm > 0.0 {
            OptState::<R>::clip_global_norm(&mut grads, config.grad_clip_norm);
        }
        state
            .opt
            .apply(&mut state.model.params, &grads, config.learning_rate);
        state.step += 1;

        if state.step.is_multiple_of(config.eval_every) || state.step == config.max_steps {
            let n = window_n.max(1) as f64;
            metrics.push(MetricRecord {
                step: state.step,
                split: "train".to_string(),
                ppl: Some((window_lm / n).exp()),
                slot_f1: None,
                loss_lm: Some(window_lm / n),
                loss_sd: if slot_on { Some(window_sd / n) } else { None },
            });
            window_lm = 0.0;
            window_sd = 0.0;
            window_n = 0;
            run_eval(&mut state, &mut metrics)?;
        }
    }

    Ok(TrainOutcome { state, metrics })
}

pub fn write_metric_log(path: &std::path::Path, metrics: &[MetricRecord]) -> Result<()> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
